//! Where streams come from and go to: `-` (stdio), `tcp://host:port`, or a
//! file path. Outputs connect to a TCP listener; inputs listen for one
//! connection.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use armkit_core::protocol::{encode_record, Record};
use armkit_core::session::DROPOUT_S;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Stdio,
    Tcp(String),
    File(PathBuf),
}

impl Endpoint {
    pub fn parse(s: &str) -> Endpoint {
        match s {
            "-" => Endpoint::Stdio,
            _ => match s.strip_prefix("tcp://") {
                Some(addr) => Endpoint::Tcp(addr.to_string()),
                None => Endpoint::File(PathBuf::from(s)),
            },
        }
    }

    pub fn open_writer(&self) -> io::Result<Box<dyn Write + Send>> {
        Ok(match self {
            Endpoint::Stdio => Box::new(io::stdout()),
            Endpoint::Tcp(addr) => {
                let s = TcpStream::connect(addr)?;
                s.set_nodelay(true)?;
                Box::new(s)
            }
            Endpoint::File(p) => Box::new(File::create(p)?),
        })
    }

    /// For TCP, binds, announces the bound address through `on_listen` and
    /// waits for one peer; reads then time out after the dropout limit.
    pub fn open_reader(&self, on_listen: impl FnOnce(&str)) -> io::Result<Box<dyn BufRead + Send>> {
        Ok(match self {
            Endpoint::Stdio => Box::new(BufReader::new(io::stdin())),
            Endpoint::Tcp(addr) => {
                let listener = TcpListener::bind(addr)?;
                on_listen(&listener.local_addr()?.to_string());
                let (s, _) = listener.accept()?;
                s.set_read_timeout(Some(Duration::from_secs_f64(DROPOUT_S)))?;
                Box::new(BufReader::new(s))
            }
            Endpoint::File(p) => Box::new(BufReader::new(File::open(p)?)),
        })
    }
}

/// Writes records, pacing samples so that stream time advances at `speed`
/// times real time (`0` = no pacing). Returns the number of samples.
pub fn write_paced<W: Write>(out: W, records: impl Iterator<Item = Record>, speed: f64) -> io::Result<usize> {
    let mut out = BufWriter::new(out);
    let start = Instant::now();
    let mut t0: Option<u64> = None;
    let mut samples = 0;
    for r in records {
        if let Record::Sample(f) = &r {
            samples += 1;
            if speed > 0.0 {
                let first = *t0.get_or_insert(f.t_ms);
                let due = Duration::from_secs_f64((f.t_ms - first) as f64 / 1000.0 / speed);
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    out.flush()?;
                    thread::sleep(wait);
                }
            }
        }
        out.write_all(encode_record(&r).as_bytes())?;
    }
    out.flush()?;
    Ok(samples)
}
