use std::collections::HashMap;
use std::hash::Hash;
use std::sync::{Arc, Mutex};

type Slot<V> = Arc<Mutex<Option<Arc<V>>>>;

/// Memo table whose concurrent lookups of one key run the computation once;
/// the others wait for its result. Failures are not cached.
pub struct Coalescing<K, V> {
    slots: Mutex<HashMap<K, Slot<V>>>,
    capacity: usize,
}

impl<K: Eq + Hash + Clone, V> Coalescing<K, V> {
    pub fn new(capacity: usize) -> Self {
        Coalescing { slots: Mutex::new(HashMap::new()), capacity }
    }

    pub fn get_or_try<E>(&self, key: &K, compute: impl FnOnce() -> Result<V, E>) -> Result<Arc<V>, E> {
        let slot = {
            let mut slots = self.slots.lock().expect("cache lock");
            if slots.len() >= self.capacity && !slots.contains_key(key) {
                slots.retain(|_, s| Arc::strong_count(s) > 1);
            }
            slots.entry(key.clone()).or_default().clone()
        };
        let mut value = slot.lock().expect("cache slot lock");
        if let Some(v) = value.as_ref() {
            return Ok(v.clone());
        }
        let v = Arc::new(compute()?);
        *value = Some(v.clone());
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
