//! The 16 atomic upper-limb therapies, their approved range of motion, and
//! patient demographics.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orientation::EulerAxis;

/// Current catalog file schema version.
pub const CATALOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("unknown therapy code `{0}`")]
    UnknownCode(String),
    #[error("therapy {0} listed more than once")]
    Duplicate(TherapyCode),
    #[error("therapy {0} missing from catalog")]
    Missing(TherapyCode),
    #[error("therapy {code}: approved range [{min}, {max}] violates 0 < min <= max <= 180")]
    BadRange { code: TherapyCode, min: f64, max: f64 },
    #[error("unsupported catalog schema version {0}")]
    SchemaVersion(u32),
}

macro_rules! therapy_codes {
    ($( $variant:ident => $abbr:literal, $name:literal; )*) => {
        /// One of the 16 atomic motions.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum TherapyCode {
            $( #[serde(rename = $abbr)] $variant, )*
        }

        impl TherapyCode {
            pub const ALL: [TherapyCode; 16] = [$( TherapyCode::$variant, )*];

            /// Short code as used in score tables (`WF`, `SERH`, ...).
            pub fn abbrev(self) -> &'static str {
                match self { $( TherapyCode::$variant => $abbr, )* }
            }

            pub fn display_name(self) -> &'static str {
                match self { $( TherapyCode::$variant => $name, )* }
            }
        }

        impl FromStr for TherapyCode {
            type Err = CatalogError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_uppercase().as_str() {
                    $( $abbr => Ok(TherapyCode::$variant), )*
                    _ => Err(CatalogError::UnknownCode(s.to_string())),
                }
            }
        }
    };
}

therapy_codes! {
    WristFlexion => "WF", "Wrist Flexion";
    WristExtension => "WE", "Wrist Extension";
    WristRadialDeviation => "WRD", "Wrist Radial Deviation";
    WristUlnarDeviation => "WUD", "Wrist Ulnar Deviation";
    ForearmPronation => "FP", "Forearm Pronation";
    ForearmSupination => "FS", "Forearm Supination";
    ElbowFlexion => "EF", "Elbow Flexion";
    ShoulderFlexion => "SF", "Shoulder Flexion";
    ShoulderExtension => "SE", "Shoulder Extension";
    ShoulderAbduction => "SA", "Shoulder Abduction";
    ShoulderAbductionHorizontal => "SAH", "Shoulder Abduction (Horizontal)";
    ShoulderAdduction => "SAD", "Shoulder Adduction";
    ShoulderExternalRotationHorizontal => "SERH", "Shoulder External Rotation (Horizontal)";
    ShoulderExternalRotationVertical => "SERV", "Shoulder External Rotation (Vertical)";
    ShoulderInternalRotationHorizontal => "SIRH", "Shoulder Internal Rotation (Horizontal)";
    ShoulderInternalRotationVertical => "SIRV", "Shoulder Internal Rotation (Vertical)";
}

impl fmt::Display for TherapyCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

/// Where the second sensor is strapped for a therapy. The first sensor is
/// always on the upper arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Imu2Placement {
    HandDorsum,
    Forearm,
    UpperArmOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleSource {
    /// Absolute (baseline-relative) orientation of the upper-arm sensor.
    Imu1,
    /// Orientation of the second sensor expressed in the first sensor's frame.
    Imu2RelativeToImu1,
}

/// Which Euler component of which sensor is the therapy's primary angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleExtractor {
    pub source: AngleSource,
    pub axis: EulerAxis,
    /// +1 or -1, so that the therapy's own direction reads positive.
    pub sign: f64,
}

impl AngleExtractor {
    const fn new(source: AngleSource, axis: EulerAxis, sign: f64) -> Self {
        AngleExtractor { source, axis, sign }
    }

    pub fn needs_imu2(&self) -> bool {
        self.source == AngleSource::Imu2RelativeToImu1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TherapyDefinition {
    pub code: TherapyCode,
    pub name: String,
    pub approved_rom_min_deg: f64,
    pub approved_rom_max_deg: f64,
    pub imu2_placement: Imu2Placement,
    pub primary_angle: AngleExtractor,
    pub base_posture_illustration: String,
}

impl TherapyDefinition {
    fn validate(&self) -> Result<(), CatalogError> {
        let (min, max) = (self.approved_rom_min_deg, self.approved_rom_max_deg);
        if !(min > 0.0 && min <= max && max <= 180.0) {
            return Err(CatalogError::BadRange { code: self.code, min, max });
        }
        Ok(())
    }

    /// Approved range as `[min, max]` degrees.
    pub fn approved_rom(&self) -> [f64; 2] {
        [self.approved_rom_min_deg, self.approved_rom_max_deg]
    }
}

/// Validated, immutable set of therapy definitions covering all 16 codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile", into = "CatalogFile")]
pub struct Catalog {
    schema_version: u32,
    entries: Vec<TherapyDefinition>,
}

/// On-disk shape of a catalog document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogFile {
    pub schema_version: u32,
    pub therapies: Vec<TherapyDefinition>,
}

impl TryFrom<CatalogFile> for Catalog {
    type Error = CatalogError;

    fn try_from(file: CatalogFile) -> Result<Self, Self::Error> {
        Catalog::new(file.schema_version, file.therapies)
    }
}

impl From<Catalog> for CatalogFile {
    fn from(c: Catalog) -> Self {
        CatalogFile { schema_version: c.schema_version, therapies: c.entries }
    }
}

impl Catalog {
    pub fn new(schema_version: u32, mut entries: Vec<TherapyDefinition>) -> Result<Self, CatalogError> {
        if schema_version != CATALOG_SCHEMA_VERSION {
            return Err(CatalogError::SchemaVersion(schema_version));
        }
        entries.sort_by_key(|e| e.code);
        for pair in entries.windows(2) {
            if pair[0].code == pair[1].code {
                return Err(CatalogError::Duplicate(pair[0].code));
            }
        }
        for code in TherapyCode::ALL {
            if !entries.iter().any(|e| e.code == code) {
                return Err(CatalogError::Missing(code));
            }
        }
        for e in &entries {
            e.validate()?;
        }
        Ok(Catalog { schema_version, entries })
    }

    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        use AngleSource::*;
        use EulerAxis::*;
        use Imu2Placement::*;
        use TherapyCode::*;

        let rows: [(TherapyCode, f64, f64, Imu2Placement, AngleExtractor); 16] = [
            (WristFlexion, 80.0, 80.0, HandDorsum, AngleExtractor::new(Imu2RelativeToImu1, Pitch, 1.0)),
            (WristExtension, 70.0, 70.0, HandDorsum, AngleExtractor::new(Imu2RelativeToImu1, Pitch, -1.0)),
            (WristRadialDeviation, 20.0, 20.0, HandDorsum, AngleExtractor::new(Imu2RelativeToImu1, Yaw, 1.0)),
            (WristUlnarDeviation, 30.0, 30.0, HandDorsum, AngleExtractor::new(Imu2RelativeToImu1, Yaw, -1.0)),
            (ForearmPronation, 80.0, 90.0, HandDorsum, AngleExtractor::new(Imu2RelativeToImu1, Roll, 1.0)),
            (ForearmSupination, 80.0, 90.0, HandDorsum, AngleExtractor::new(Imu2RelativeToImu1, Roll, -1.0)),
            (ElbowFlexion, 135.0, 150.0, Forearm, AngleExtractor::new(Imu2RelativeToImu1, Pitch, 1.0)),
            (ShoulderFlexion, 170.0, 170.0, UpperArmOnly, AngleExtractor::new(Imu1, Pitch, 1.0)),
            (ShoulderExtension, 60.0, 60.0, UpperArmOnly, AngleExtractor::new(Imu1, Pitch, -1.0)),
            (ShoulderAbduction, 170.0, 170.0, UpperArmOnly, AngleExtractor::new(Imu1, Yaw, 1.0)),
            (ShoulderAbductionHorizontal, 40.0, 40.0, UpperArmOnly, AngleExtractor::new(Imu1, Yaw, 1.0)),
            (ShoulderAdduction, 130.0, 130.0, UpperArmOnly, AngleExtractor::new(Imu1, Yaw, -1.0)),
            (ShoulderExternalRotationHorizontal, 80.0, 80.0, Forearm, AngleExtractor::new(Imu1, Roll, 1.0)),
            (ShoulderExternalRotationVertical, 90.0, 90.0, Forearm, AngleExtractor::new(Imu1, Roll, 1.0)),
            (ShoulderInternalRotationHorizontal, 60.0, 60.0, Forearm, AngleExtractor::new(Imu1, Roll, -1.0)),
            (ShoulderInternalRotationVertical, 70.0, 70.0, Forearm, AngleExtractor::new(Imu1, Roll, -1.0)),
        ];

        let entries = rows
            .into_iter()
            .map(|(code, min, max, placement, extractor)| TherapyDefinition {
                code,
                name: code.display_name().to_string(),
                approved_rom_min_deg: min,
                approved_rom_max_deg: max,
                imu2_placement: placement,
                primary_angle: extractor,
                base_posture_illustration: alloc::format!("postures/{}.png", code.abbrev()),
            })
            .collect();
        Catalog::new(CATALOG_SCHEMA_VERSION, entries).expect("builtin catalog is valid")
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn lookup(&self, code: TherapyCode) -> &TherapyDefinition {
        // Construction guarantees every code is present.
        self.entries.iter().find(|e| e.code == code).expect("catalog is total")
    }

    /// Looks a therapy up by its abbreviation.
    pub fn lookup_str(&self, code: &str) -> Result<&TherapyDefinition, CatalogError> {
        Ok(self.lookup(code.parse()?))
    }

    pub fn iter(&self) -> impl Iterator<Item = &TherapyDefinition> {
        self.entries.iter()
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::builtin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "X")]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limb {
    Left,
    Right,
}

/// Opaque patient identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PatientId(pub String);

impl fmt::Display for PatientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PatientError {
    #[error("age must be positive")]
    NonPositiveAge,
    #[error("full name must not be empty")]
    MissingName,
    #[error("invalid patient id `{0}`")]
    BadId(String),
}

/// Registration form for a new patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub full_name: String,
    pub birth_year: i32,
    pub age_years: u32,
    pub sex: Sex,
    pub uld_duration_months: u32,
    pub affected_limb: Limb,
}

impl Demographics {
    pub fn validate(&self) -> Result<(), PatientError> {
        if self.age_years == 0 {
            return Err(PatientError::NonPositiveAge);
        }
        if self.full_name.trim().is_empty() {
            return Err(PatientError::MissingName);
        }
        Ok(())
    }

    /// Key used to detect duplicate registrations: case-folded name plus birth year.
    pub fn natural_key(&self) -> (String, i32) {
        let name = self
            .full_name
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        (name, self.birth_year)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: PatientId,
    #[serde(flatten)]
    pub demographics: Demographics,
}

impl PatientId {
    /// Ids are used as file names, so they are restricted to `[A-Za-z0-9_-]`.
    pub fn parse(s: &str) -> Result<Self, PatientError> {
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(PatientError::BadId(s.to_string()));
        }
        Ok(PatientId(s.to_string()))
    }
}
