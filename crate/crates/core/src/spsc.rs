//! Bounded lock-free single-producer single-consumer queue.
//!
//! Pipeline stages hand messages to each other through these. Neither side
//! ever blocks: `push` fails when the queue is full and `pop` returns `None`
//! when it is empty.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

// Keep head and tail on separate cache lines.
#[repr(align(64))]
struct CachePadded<T>(T);

struct Shared<T> {
    buf: Box<[UnsafeCell<MaybeUninit<T>>]>,
    /// Next slot to read. Written by the consumer only.
    head: CachePadded<AtomicUsize>,
    /// Next slot to write. Written by the producer only.
    tail: CachePadded<AtomicUsize>,
    producer_alive: AtomicBool,
    consumer_alive: AtomicBool,
}

// Slots are handed across threads by the head/tail protocol.
unsafe impl<T: Send> Send for Shared<T> {}
unsafe impl<T: Send> Sync for Shared<T> {}

impl<T> Shared<T> {
    fn capacity(&self) -> usize {
        self.buf.len()
    }
}

impl<T> Drop for Shared<T> {
    fn drop(&mut self) {
        let head = *self.head.0.get_mut();
        let tail = *self.tail.0.get_mut();
        let cap = self.capacity();
        let mut i = head;
        while i != tail {
            unsafe { (*self.buf[i % cap].get()).assume_init_drop() };
            i = i.wrapping_add(1);
        }
    }
}

pub struct Producer<T> {
    shared: Arc<Shared<T>>,
    cached_head: usize,
}

pub struct Consumer<T> {
    shared: Arc<Shared<T>>,
    cached_tail: usize,
}

/// Create a queue holding at most `capacity` items.
///
/// # Panics
/// If `capacity` is zero.
pub fn channel<T>(capacity: usize) -> (Producer<T>, Consumer<T>) {
    assert!(capacity > 0, "spsc capacity must be positive");
    let buf = (0..capacity)
        .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
        .collect::<Vec<_>>()
        .into_boxed_slice();
    let shared = Arc::new(Shared {
        buf,
        head: CachePadded(AtomicUsize::new(0)),
        tail: CachePadded(AtomicUsize::new(0)),
        producer_alive: AtomicBool::new(true),
        consumer_alive: AtomicBool::new(true),
    });
    (
        Producer {
            shared: shared.clone(),
            cached_head: 0,
        },
        Consumer {
            shared,
            cached_tail: 0,
        },
    )
}

impl<T> Producer<T> {
    /// Enqueue `value`, handing it back if the queue is full.
    pub fn push(&mut self, value: T) -> Result<(), T> {
        let cap = self.shared.capacity();
        let tail = self.shared.tail.0.load(Ordering::Relaxed);
        if tail.wrapping_sub(self.cached_head) >= cap {
            self.cached_head = self.shared.head.0.load(Ordering::Acquire);
            if tail.wrapping_sub(self.cached_head) >= cap {
                return Err(value);
            }
        }
        unsafe { (*self.shared.buf[tail % cap].get()).write(value) };
        self.shared.tail.0.store(tail.wrapping_add(1), Ordering::Release);
        Ok(())
    }

    pub fn len(&self) -> usize {
        let tail = self.shared.tail.0.load(Ordering::Relaxed);
        tail.wrapping_sub(self.shared.head.0.load(Ordering::Acquire))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity()
    }

    /// True once the consumer has been dropped.
    pub fn is_abandoned(&self) -> bool {
        !self.shared.consumer_alive.load(Ordering::Acquire)
    }
}

impl<T> Consumer<T> {
    pub fn pop(&mut self) -> Option<T> {
        let cap = self.shared.capacity();
        let head = self.shared.head.0.load(Ordering::Relaxed);
        if head == self.cached_tail {
            self.cached_tail = self.shared.tail.0.load(Ordering::Acquire);
            if head == self.cached_tail {
                return None;
            }
        }
        let value = unsafe { (*self.shared.buf[head % cap].get()).assume_init_read() };
        self.shared.head.0.store(head.wrapping_add(1), Ordering::Release);
        Some(value)
    }

    pub fn len(&self) -> usize {
        let head = self.shared.head.0.load(Ordering::Relaxed);
        self.shared.tail.0.load(Ordering::Acquire).wrapping_sub(head)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity()
    }

    /// True once the producer has been dropped. Items already queued can
    /// still be popped.
    pub fn is_abandoned(&self) -> bool {
        !self.shared.producer_alive.load(Ordering::Acquire)
    }

    /// Pop everything currently queued.
    pub fn drain(&mut self) -> impl Iterator<Item = T> + '_ {
        std::iter::from_fn(move || self.pop())
    }
}

impl<T> Drop for Producer<T> {
    fn drop(&mut self) {
        self.shared.producer_alive.store(false, Ordering::Release);
    }
}

impl<T> Drop for Consumer<T> {
    fn drop(&mut self) {
        self.shared.consumer_alive.store(false, Ordering::Release);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    #[test]
    fn full_and_empty() {
        let (mut tx, mut rx) = channel(2);
        assert_eq!(rx.pop(), None::<u32>);
        tx.push(1).unwrap();
        tx.push(2).unwrap();
        assert_eq!(tx.push(3), Err(3));
        assert_eq!(tx.len(), 2);
        assert_eq!(rx.pop(), Some(1));
        tx.push(3).unwrap();
        assert_eq!(rx.drain().collect::<Vec<_>>(), vec![2, 3]);
        assert!(rx.is_empty());
    }

    #[test]
    fn abandonment_is_visible() {
        let (tx, rx) = channel::<u8>(4);
        assert!(!rx.is_abandoned());
        drop(tx);
        assert!(rx.is_abandoned());
        let (tx, rx) = channel::<u8>(4);
        drop(rx);
        assert!(tx.is_abandoned());
    }

    #[test]
    fn queued_items_are_dropped_with_the_queue() {
        let marker = Arc::new(());
        let (mut tx, rx) = channel(8);
        for _ in 0..5 {
            tx.push(marker.clone()).unwrap();
        }
        assert_eq!(Arc::strong_count(&marker), 6);
        drop(tx);
        drop(rx);
        assert_eq!(Arc::strong_count(&marker), 1);
    }

    #[test]
    fn threaded_order_is_preserved() {
        const N: u64 = 1_000_000;
        let (mut tx, mut rx) = channel(1024);
        let producer = std::thread::spawn(move || {
            let mut i = 0;
            while i < N {
                if tx.push(i).is_ok() {
                    i += 1;
                } else {
                    std::hint::spin_loop();
                }
            }
        });
        let mut expected = 0;
        while expected < N {
            if let Some(v) = rx.pop() {
                assert_eq!(v, expected);
                expected += 1;
            } else {
                std::hint::spin_loop();
            }
        }
        producer.join().unwrap();
        assert_eq!(rx.pop(), None);
    }

    proptest! {
        #[test]
        fn behaves_like_a_bounded_fifo(cap in 1usize..8, ops in prop::collection::vec(any::<Option<u16>>(), 0..200)) {
            let (mut tx, mut rx) = channel(cap);
            let mut model = VecDeque::new();
            for op in ops {
                match op {
                    Some(v) => {
                        let res = tx.push(v);
                        if model.len() < cap {
                            prop_assert!(res.is_ok());
                            model.push_back(v);
                        } else {
                            prop_assert_eq!(res, Err(v));
                        }
                    }
                    None => prop_assert_eq!(rx.pop(), model.pop_front()),
                }
                prop_assert_eq!(rx.len(), model.len());
            }
        }
    }
}
