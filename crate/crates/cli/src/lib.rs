//! Library half of the `pregcare` command-line tool.

pub mod client;
pub mod fleet;

use std::fmt::Write as _;

use pregcare_core::api::{Ack, ErrorCode, ErrorReply};
use pregcare_core::protocol::{parse_inbound, serialize_inbound};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const DOMAIN: i32 = 1;
    pub const TRANSPORT: i32 = 2;
}

/// Validates a payload locally and returns its canonical form, so bad
/// input is reported without contacting the server.
pub fn prepare_payload(raw: &str, sender: &str) -> Result<String, ErrorReply> {
    let msg = parse_inbound(raw, sender, chrono::Utc::now()).map_err(ErrorReply::from)?;
    serialize_inbound(&msg.body).map_err(ErrorReply::from)
}

/// One-line summary of an acknowledgment.
pub fn describe_ack(ack: &Ack) -> String {
    let mut s = String::new();
    match ack {
        Ack::Reg {
            patient_id,
            care_center_id,
            appointment_id,
            review_date,
        } => {
            let _ = write!(
                s,
                "{patient_id} registered at {care_center_id}; review {appointment_id} on {review_date}"
            );
        }
        Ack::Help {
            request_id,
            state,
            hospital_id,
            duplicate,
        } => {
            let _ = write!(s, "{request_id} {state}");
            if let Some(h) = hospital_id {
                let _ = write!(s, " at {h}");
            }
            if *duplicate {
                s.push_str(" (retry of an earlier message)");
            }
        }
        Ack::Chg {
            appointment_id,
            review_date,
        } => {
            let _ = write!(s, "{appointment_id} moved to {review_date}");
        }
    }
    s
}

/// Exit code for an error reply: server faults count as transport trouble.
pub fn exit_code_for(e: &ErrorReply) -> i32 {
    if e.code == ErrorCode::Internal {
        exit::TRANSPORT
    } else {
        exit::DOMAIN
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_side_validation() {
        let e = prepare_payload("HELP|P000017|95|44.0307111|2014-01-25T05:19:55Z", "+9647501234567").unwrap_err();
        assert_eq!(e.code, ErrorCode::OutOfRange);
        let ok = prepare_payload(
            "HELP|P000017|36.2062125|44.0307111|2014-01-25T05:19:55Z",
            "+9647501234567",
        )
        .unwrap();
        assert_eq!(ok, "HELP|P000017|36.2062125|44.0307111|2014-01-25T05:19:55Z");
    }

    #[test]
    fn ack_lines() {
        let ack = Ack::Help {
            request_id: pregcare_core::RequestId::new("R000001"),
            state: pregcare_core::RequestState::Located,
            hospital_id: Some(pregcare_core::FacilityId::new("H1")),
            duplicate: false,
        };
        assert_eq!(describe_ack(&ack), "R000001 located at H1");
    }
}
