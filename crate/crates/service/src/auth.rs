//! Login and bearer-token sessions.

use std::collections::HashMap;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use rand::RngCore;

use pregcare_core::api::{ErrorCode, ErrorReply, LoginResponse, Principal};
use pregcare_core::registry::password::{self, PasswordHasher};
use pregcare_core::registry::{Role, Tables};
use pregcare_core::SharedClock;

#[derive(Debug, Clone)]
struct Session {
    principal: Principal,
    expires_at: DateTime<Utc>,
}

pub struct Sessions {
    ttl: Duration,
    clock: SharedClock,
    decoy: String,
    live: Mutex<HashMap<String, Session>>,
}

/// Account lookup result: stored hash and the principal it unlocks.
fn find_account(tables: &Tables, username: &str) -> Option<(String, Principal)> {
    if let Some(a) = tables.admin_accounts.get(username) {
        let principal = match a.role {
            Role::EmcOperator => Principal::EmcOperator,
            Role::Admin => Principal::Admin,
        };
        return Some((a.password_hash.clone(), principal));
    }
    tables.doctors.values().find(|d| d.username == username).map(|d| {
        (
            d.password_hash.clone(),
            Principal::Doctor {
                doctor_id: d.doctor_id.clone(),
            },
        )
    })
}

fn bad_credentials() -> ErrorReply {
    ErrorReply::new(ErrorCode::BadCredentials, "unknown user or wrong password")
}

impl Sessions {
    pub fn new(ttl: Duration, clock: SharedClock) -> Self {
        Sessions {
            ttl,
            clock,
            decoy: password::decoy_hash(&PasswordHasher::default()),
            live: Mutex::new(HashMap::new()),
        }
    }

    /// Checks credentials and issues a token. Unknown users are verified
    /// against a decoy hash so both failures take the same time and return
    /// the same error.
    pub fn login(&self, tables: &Tables, username: &str, password: &str) -> Result<LoginResponse, ErrorReply> {
        let account = find_account(tables, username);
        let stored = account.as_ref().map_or(self.decoy.as_str(), |(h, _)| h.as_str());
        let ok = password::verify(stored, password);
        let Some((_, principal)) = account.filter(|_| ok) else {
            return Err(bad_credentials());
        };
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let expires_at = self.clock.now() + self.ttl;
        let mut live = self.live.lock();
        let now = self.clock.now();
        live.retain(|_, s| s.expires_at > now);
        live.insert(
            token.clone(),
            Session {
                principal: principal.clone(),
                expires_at,
            },
        );
        Ok(LoginResponse {
            token,
            principal,
            expires_at,
        })
    }

    /// The principal behind a live token.
    pub fn check(&self, token: &str) -> Result<Principal, ErrorReply> {
        let now = self.clock.now();
        let mut live = self.live.lock();
        match live.get(token) {
            Some(s) if s.expires_at > now => Ok(s.principal.clone()),
            Some(_) => {
                live.remove(token);
                Err(ErrorReply::new(ErrorCode::Unauthorized, "session expired"))
            }
            None => Err(ErrorReply::new(ErrorCode::Unauthorized, "missing or unknown token")),
        }
    }
}
