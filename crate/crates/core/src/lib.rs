//! Domain core for a pregnancy care and emergency dispatch server.
//!
//! Patients register and call for help with short SMS-style messages. The
//! server routes each message to the nearest facility by great-circle
//! distance, keeps the request state machine and queues notifications.

pub mod api;
pub mod care;
pub mod clock;
pub mod config;
pub mod dispatch;
pub mod geo;
pub mod ids;
pub mod notify;
pub mod protocol;
pub mod registry;

pub use clock::{Clock, ManualClock, SharedClock, SystemClock};
pub use geo::{
    haversine_distance, nearest_facility, DistanceKm, EarthModel, FacilityKind, GeoError, GeoPoint, Site,
    EARTH_RADIUS_KM,
};
pub use ids::*;
pub use protocol::{InboundMessage, Language, MessageBody, MessageKind, ProtocolError};
pub use registry::{Registry, RegistryError, RequestState, StoreError};
