//! Shared buffer of recently published MP3 frames.
//!
//! The producer appends packets; every listener session takes a snapshot of
//! the buffered packets (the connect burst) together with a live receiver.
//! Both happen under one lock, so a session sees each packet exactly once.

use std::collections::VecDeque;
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::Mutex;
use tokio::sync::broadcast;

/// Shortest MPEG-1 Layer III frame (1152 samples at 48 kHz).
const MIN_FRAME_S: f64 = 1152.0 / 48_000.0;

#[derive(Debug, Clone)]
pub struct StreamPacket {
    pub seq: u64,
    pub bytes: Bytes,
    pub duration_s: f64,
    pub title: Arc<str>,
}

#[derive(Debug)]
struct RingInner {
    packets: VecDeque<Arc<StreamPacket>>,
    buffered_s: f64,
    next_seq: u64,
}

#[derive(Debug)]
pub struct BroadcastRing {
    capacity_s: f64,
    inner: Mutex<RingInner>,
    tx: broadcast::Sender<Arc<StreamPacket>>,
}

impl BroadcastRing {
    pub fn new(capacity_s: f64) -> Self {
        let capacity_s = capacity_s.max(0.0);
        // a live receiver may fall one full horizon behind before it lags out
        let slots = ((capacity_s / MIN_FRAME_S).ceil() as usize + 64).max(128);
        let (tx, _) = broadcast::channel(slots);
        Self {
            capacity_s,
            inner: Mutex::new(RingInner {
                packets: VecDeque::new(),
                buffered_s: 0.0,
                next_seq: 0,
            }),
            tx,
        }
    }

    pub fn capacity_s(&self) -> f64 {
        self.capacity_s
    }

    /// Appends one frame, evicting the oldest ones beyond the horizon.
    pub fn publish(&self, bytes: Bytes, duration_s: f64, title: Arc<str>) -> u64 {
        let mut inner = self.inner.lock();
        let seq = inner.next_seq;
        inner.next_seq += 1;
        let packet = Arc::new(StreamPacket {
            seq,
            bytes,
            duration_s,
            title,
        });
        inner.buffered_s += duration_s;
        inner.packets.push_back(packet.clone());
        while inner.buffered_s > self.capacity_s + 1e-9 {
            match inner.packets.pop_front() {
                Some(old) => inner.buffered_s -= old.duration_s,
                None => break,
            }
        }
        if inner.packets.is_empty() {
            inner.buffered_s = 0.0;
        }
        // no receivers is fine: nobody is listening yet
        let _ = self.tx.send(packet);
        seq
    }

    /// Buffered packets plus a receiver for everything published afterwards.
    pub fn subscribe(&self) -> (Vec<Arc<StreamPacket>>, broadcast::Receiver<Arc<StreamPacket>>) {
        let inner = self.inner.lock();
        let rx = self.tx.subscribe();
        (inner.packets.iter().cloned().collect(), rx)
    }

    pub fn buffered_seconds(&self) -> f64 {
        self.inner.lock().buffered_s
    }

    pub fn len(&self) -> usize {
        self.inner.lock().packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn next_seq(&self) -> u64 {
        self.inner.lock().next_seq
    }
}
