//! Identifier newtypes.
//!
//! Server-generated ids are a one or two letter prefix followed by a
//! zero-padded counter, so lexical order matches creation order.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

id_type!(PatientId);
id_type!(FacilityId);
id_type!(DoctorId);
id_type!(UnitId);
id_type!(RequestId);
id_type!(AppointmentId);
id_type!(AdviceId);
id_type!(NotificationId);
id_type!(FileId);
id_type!(AccountId);

/// Prefix and width for each generated id family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdScheme {
    pub prefix: &'static str,
    pub width: usize,
}

impl IdScheme {
    pub const PATIENT: IdScheme = IdScheme { prefix: "P", width: 6 };
    pub const REQUEST: IdScheme = IdScheme { prefix: "R", width: 6 };
    pub const APPOINTMENT: IdScheme = IdScheme { prefix: "A", width: 6 };
    pub const ADVICE: IdScheme = IdScheme { prefix: "AD", width: 4 };
    pub const NOTIFICATION: IdScheme = IdScheme { prefix: "N", width: 8 };
    pub const FILE: IdScheme = IdScheme { prefix: "PF", width: 6 };

    pub fn format(&self, n: u64) -> String {
        format!("{}{:0width$}", self.prefix, n, width = self.width)
    }

    /// Counter value of an id in this scheme, if it is one.
    pub fn parse(&self, id: &str) -> Option<u64> {
        let digits = id.strip_prefix(self.prefix)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scheme_round_trip() {
        assert_eq!(IdScheme::PATIENT.format(17), "P000017");
        assert_eq!(IdScheme::PATIENT.parse("P000017"), Some(17));
        assert_eq!(IdScheme::PATIENT.parse("PF000017"), None);
        assert_eq!(IdScheme::FILE.parse("PF000017"), Some(17));
        assert_eq!(IdScheme::NOTIFICATION.format(3), "N00000003");
    }
}
