//! The split-training protocol as an explicit message-passing simulation.
//!
//! Party 1 (index 0) is active: it owns the labels, its own extractor, the
//! head and any defense state. Passive parties own only their extractors;
//! they upload representations and receive representation gradients. Every
//! exchange is recorded in a [`ProtocolTrace`].

mod dropout;
mod federation;
mod party;
pub mod protocol;

pub use dropout::{sample_mask, DropoutMask};
pub use federation::{
    accuracy, argmax_rows, train_multi_head, AmcHook, Defense, Federation, FederationConfig, Presence,
    RoundReport, MAX_MULTI_HEAD_PARTIES,
};
pub use party::{BoostedUpdate, LocalUpdate, PassiveParty};
pub use protocol::{payload_digest, Direction, GradMessage, ProtocolEvent, ProtocolTrace, RepMessage};
