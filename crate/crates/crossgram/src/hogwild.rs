//! Unsynchronized shared state for lock-free data-parallel SGD.

use std::cell::UnsafeCell;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

/// Shared mutable value: every clone hands out mutable access to the same
/// data with no synchronization. Concurrent float updates race; lost updates
/// and torn reads are accepted as training noise. Nothing outside the trainer
/// may rely on cross-thread consistency of the wrapped value, and the value
/// must only be extracted after all worker clones are dropped.
pub(crate) struct Hogwild<T>(Arc<UnsafeCell<T>>);

unsafe impl<T: Send> Send for Hogwild<T> {}
unsafe impl<T: Send> Sync for Hogwild<T> {}

impl<T> Hogwild<T> {
    pub fn new(value: T) -> Self {
        Hogwild(Arc::new(UnsafeCell::new(value)))
    }

    /// Recovers the value once training is done. Panics if worker clones are
    /// still alive.
    pub fn into_inner(self) -> T {
        match Arc::try_unwrap(self.0) {
            Ok(cell) => cell.into_inner(),
            Err(_) => panic!("Hogwild value still shared"),
        }
    }
}

impl<T> Clone for Hogwild<T> {
    fn clone(&self) -> Self {
        Hogwild(self.0.clone())
    }
}

impl<T> Deref for Hogwild<T> {
    type Target = T;

    fn deref(&self) -> &T {
        unsafe { &*self.0.get() }
    }
}

impl<T> DerefMut for Hogwild<T> {
    fn deref_mut(&mut self) -> &mut T {
        unsafe { &mut *self.0.get() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clones_share_the_value() {
        let a = Hogwild::new(vec![0u64; 4]);
        let mut b = a.clone();
        b[2] = 7;
        assert_eq!(a[2], 7);
        drop(b);
        assert_eq!(a.into_inner(), vec![0, 0, 7, 0]);
    }

    #[test]
    #[should_panic(expected = "still shared")]
    fn into_inner_rejects_live_clones() {
        let a = Hogwild::new(1u8);
        let _b = a.clone();
        a.into_inner();
    }
}
