use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{AgentId, Outgoing};

/// One-way delays between agents, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkDelays {
    pub device_gateway_ms: u64,
    pub gateway_bridge_ms: u64,
}

impl Default for LinkDelays {
    fn default() -> Self {
        LinkDelays { device_gateway_ms: 5, gateway_bridge_ms: 58 }
    }
}

impl LinkDelays {
    pub fn between(&self, a: AgentId, b: AgentId) -> u64 {
        use AgentId::*;
        match (a, b) {
            (Device, Gateway) | (Gateway, Device) => self.device_gateway_ms,
            (Gateway, Bridge) | (Bridge, Gateway) => self.gateway_bridge_ms,
            (Device, Bridge) | (Bridge, Device) => self.device_gateway_ms + self.gateway_bridge_ms,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Delivery {
    pub deliver_ms: u64,
    pub seq: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub name: &'static str,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub sent_ms: u64,
    pub from: AgentId,
    pub to: AgentId,
    pub name: &'static str,
}

impl std::fmt::Display for TranscriptEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{} {}", self.from, self.to, self.name)
    }
}

/// In-process transport delivering messages in (time, send order) order.
#[derive(Debug, Default)]
pub struct Bus {
    now_ms: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<Delivery>>,
    parked: Vec<Delivery>,
    delays: LinkDelays,
    transcript: Vec<TranscriptEntry>,
    wire: Vec<Delivery>,
}

impl Bus {
    pub fn new(delays: LinkDelays) -> Self {
        Bus { delays, ..Default::default() }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn advance_clock(&mut self, ms: u64) {
        self.now_ms += ms;
    }

    pub fn send(&mut self, from: AgentId, out: Outgoing) {
        self.transcript.push(TranscriptEntry { sent_ms: self.now_ms, from, to: out.to, name: out.name });
        self.enqueue(from, out.to, out.name, out.bytes);
    }

    /// Puts raw bytes on the wire without a transcript entry, as an attacker would.
    pub fn inject(&mut self, from: AgentId, to: AgentId, bytes: Vec<u8>) {
        self.enqueue(from, to, "injected", bytes);
    }

    fn enqueue(&mut self, from: AgentId, to: AgentId, name: &'static str, bytes: Vec<u8>) {
        let d =
            Delivery { deliver_ms: self.now_ms + self.delays.between(from, to), seq: self.seq, from, to, name, bytes };
        self.seq += 1;
        self.queue.push(Reverse(d));
    }

    /// Next message due, advancing the clock to its delivery time.
    pub fn pop(&mut self) -> Option<Delivery> {
        let Reverse(d) = self.queue.pop()?;
        self.now_ms = self.now_ms.max(d.deliver_ms);
        self.wire.push(d.clone());
        Some(d)
    }

    /// Holds a message for an agent that is offline.
    pub fn park(&mut self, d: Delivery) {
        self.parked.push(d);
    }

    /// Releases messages held for `agent`, delivering them now in original order.
    pub fn unpark(&mut self, agent: AgentId) {
        let (mine, rest): (Vec<_>, Vec<_>) = self.parked.drain(..).partition(|d| d.to == agent);
        self.parked = rest;
        for mut d in mine {
            d.deliver_ms = self.now_ms;
            self.queue.push(Reverse(d));
        }
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn parked(&self) -> &[Delivery] {
        &self.parked
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// Every delivered message with its raw bytes, as a passive observer sees them.
    pub fn wire(&self) -> &[Delivery] {
        &self.wire
    }
}
