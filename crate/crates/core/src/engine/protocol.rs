//! Messages crossing the party boundary, and a trace of every exchange.

use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Party `party`'s representations `H^k` for one round's batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMessage {
    pub party: usize,
    pub round: u64,
    pub payload: Tensor,
}

/// Gradient of the active party's objective w.r.t. a [`RepMessage`] payload.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMessage {
    pub party: usize,
    pub round: u64,
    pub payload: Tensor,
}

impl RepMessage {
    pub fn rows(&self) -> usize {
        self.payload.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Passive to active: representations.
    Upload,
    /// Active to passive: representation gradients.
    Gradient,
}

/// One message as seen on the wire: who, when, which way, what shape, and a
/// digest of the payload bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolEvent {
    pub round: u64,
    pub party: usize,
    pub direction: Direction,
    pub rows: usize,
    pub cols: usize,
    pub digest: u64,
}

impl ProtocolEvent {
    pub(crate) fn new(round: u64, party: usize, direction: Direction, payload: &Tensor) -> Self {
        Self {
            round,
            party,
            direction,
            rows: payload.rows(),
            cols: payload.cols(),
            digest: payload_digest(payload),
        }
    }

    /// The event with its payload digest erased: everything a passive party
    /// could observe besides the gradient values themselves.
    pub fn shape_only(&self) -> Self {
        Self { digest: 0, ..*self }
    }
}

/// FNV-1a over the payload's bit patterns.
pub fn payload_digest(t: &Tensor) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in t.data() {
        for byte in v.to_bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Append-only log of every message exchanged.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolTrace {
    events: Vec<ProtocolEvent>,
}

impl ProtocolTrace {
    pub(crate) fn push(&mut self, e: ProtocolEvent) {
        self.events.push(e);
    }

    pub fn events(&self) -> &[ProtocolEvent] {
        &self.events
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }

    /// Checks that every upload from a party in a round is answered by at most
    /// one gradient of identical shape, and that no gradient arrives unasked.
    /// Returns the number of answered uploads.
    pub fn check_conservation(&self) -> Result<usize, ProtocolEvent> {
        let mut answered = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.direction != Direction::Gradient {
                continue;
            }
            let uploads = self.events[..i]
                .iter()
                .filter(|u| u.direction == Direction::Upload && u.round == e.round && u.party == e.party)
                .count();
            let replies = self
                .events
                .iter()
                .filter(|g| g.direction == Direction::Gradient && g.round == e.round && g.party == e.party)
                .count();
            let matching = self.events[..i].iter().any(|u| {
                u.direction == Direction::Upload
                    && u.round == e.round
                    && u.party == e.party
                    && u.rows == e.rows
                    && u.cols == e.cols
            });
            if uploads != 1 || replies != 1 || !matching {
                return Err(*e);
            }
            answered += 1;
        }
        Ok(answered)
    }
}
