//! In-memory session store with idle-time eviction and idempotency replay.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use scribblematte::session::Session;

pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);

/// A stored response, replayed verbatim for a repeated idempotency key.
#[derive(Clone, Debug)]
pub struct Replay {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

struct Slot {
    session: Arc<Mutex<Session>>,
    touched: Instant,
}

struct Inner {
    sessions: HashMap<String, Slot>,
    replays: HashMap<String, (Replay, Instant)>,
    in_flight: HashMap<String, Arc<tokio::sync::Mutex<()>>>,
}

pub struct SessionStore {
    ttl: Duration,
    inner: Mutex<Inner>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            inner: Mutex::new(Inner {
                sessions: HashMap::new(),
                replays: HashMap::new(),
                in_flight: HashMap::new(),
            }),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn insert(&self, session: Session) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut g = self.lock();
        g.sessions.insert(
            id.clone(),
            Slot {
                session: Arc::new(Mutex::new(session)),
                touched: Instant::now(),
            },
        );
        id
    }

    /// The session behind `id`, refreshing its idle timer.
    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.evict_expired(Instant::now());
        let mut g = self.lock();
        let slot = g.sessions.get_mut(id)?;
        slot.touched = Instant::now();
        Some(slot.session.clone())
    }

    pub fn remove(&self, id: &str) -> bool {
        self.lock().sessions.remove(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.lock().sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops sessions and replays idle for longer than the TTL as of `now`.
    pub fn evict_expired(&self, now: Instant) -> usize {
        let ttl = self.ttl;
        let mut g = self.lock();
        let before = g.sessions.len();
        g.sessions.retain(|_, s| now.saturating_duration_since(s.touched) <= ttl);
        g.replays.retain(|_, (_, t)| now.saturating_duration_since(*t) <= ttl);
        g.in_flight.retain(|_, m| Arc::strong_count(m) > 1);
        before - g.sessions.len()
    }

    /// Serializes requests that share an idempotency key, so a retry racing
    /// the original waits for its stored response.
    pub fn key_lock(&self, key: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.lock().in_flight.entry(key.to_string()).or_default().clone()
    }

    pub fn replay(&self, key: &str) -> Option<Replay> {
        self.lock().replays.get(key).map(|(r, _)| r.clone())
    }

    pub fn remember(&self, key: String, replay: Replay) {
        self.lock().replays.insert(key, (replay, Instant::now()));
    }
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_TTL)
    }
}
