//! Zero-copy local publish/subscribe.
//!
//! Every message type is split by a partial-serialization pass into a
//! *control part* (fixed-length fields, strings, array lengths) that travels
//! over a local stream socket, and a *data part* (the payloads of all
//! variable-length arrays of fixed-length elements) that lives in a
//! publisher-owned shared-memory region and is never copied or serialized.
//!
//! ```text
//!  publisher process                         subscriber process
//!  ┌───────────────────────┐   envelope    ┌───────────────────────┐
//!  │ OutboundMessage       │ ────────────► │ MessageView           │
//!  │  control fields       │  unix socket  │  control fields       │
//!  │  DATA views ──┐       │               │  DATA views ──┐       │
//!  └───────────────┼───────┘               └───────────────┼───────┘
//!                  ▼                                       ▼
//!          ┌─────────────────────── shm region ───────────────────┐
//!          │ RegionHeader │ Block[magic,rc,prev,next,len|payload] │
//!          └──────────────────────────────────────────────────────┘
//! ```
//!
//! Module map:
//!
//! - [`schema`]: `.msg` parsing, fixed/variable resolution, classification
//!   into a [`schema::ClassificationPlan`] and data-part layout.
//! - [`value`]: the dynamic message value the plans are interpreted against.
//! - [`wire`]: control-image and envelope codecs, plus classic full
//!   serialization used as the test oracle and the copy baseline.
//! - [`shm`]: shared-memory regions, block lifetime and reclamation.
//! - [`transport`]: topic discovery and the length-framed socket channel.
//! - [`runtime`]: the `Node` / `Publisher` / `Subscriber` API.

pub mod instrument;
pub mod runtime;
pub mod schema;
pub mod shm;
pub mod transport;
pub mod value;
pub mod wire;

pub use runtime::{MessageView, Node, OutboundMessage, Publisher, RuntimeError, SubscriberId};
pub use schema::{classify, parse_schema, plan_layout, ClassificationPlan, MessageSchema, SchemaRegistry};
pub use shm::Policy;
pub use value::Value;
