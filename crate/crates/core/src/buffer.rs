//! Fixed-capacity ring of per-step filter snapshots.
//!
//! Entry `k` holds the prediction into step `k` and the transition `F_k`
//! that produced it, so the state-transition product from step `a` to step
//! `b` multiplies the transitions stored at `a+1 ..= b`.

use nalgebra::{SMatrix, SVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry<const N: usize> {
    pub step: usize,
    /// Predicted state at `step`.
    pub x_pred: SVector<f64, N>,
    pub p_pred: SMatrix<f64, N, N>,
    /// Transition from `step - 1` into `step`.
    pub f: SMatrix<f64, N, N>,
    /// Process noise added over the same transition.
    pub q_eff: SMatrix<f64, N, N>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum BufferError {
    #[error("buffer push out of order: expected step {expected}, got {got}")]
    NonConsecutive { expected: usize, got: usize },
    #[error("step {0} is not retained in the buffer")]
    NotRetained(usize),
    #[error("invalid step range {from}..{to}")]
    InvalidRange { from: usize, to: usize },
    #[error("buffer capacity must be at least 1")]
    ZeroCapacity,
}

/// Ring buffer addressed by `(step - first_step) % capacity`.
#[derive(Debug, Clone)]
pub struct CircularBuffer<const N: usize> {
    slots: Vec<BufferEntry<N>>,
    capacity: usize,
    first_step: usize,
    head: Option<usize>,
}

impl<const N: usize> CircularBuffer<N> {
    pub fn new(capacity: usize) -> Result<Self, BufferError> {
        if capacity == 0 {
            return Err(BufferError::ZeroCapacity);
        }
        Ok(Self { slots: Vec::with_capacity(capacity), capacity, first_step: 0, head: None })
    }

    /// Smallest capacity that retains a delay of `max_delay` seconds, endpoints included.
    pub fn capacity_for(max_delay: f64, dt: f64) -> usize {
        (max_delay / dt - 1e-9).ceil().max(0.0) as usize + 1
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Newest stored step.
    pub fn head(&self) -> Option<usize> {
        self.head
    }

    /// Oldest stored step.
    pub fn oldest(&self) -> Option<usize> {
        self.head.map(|h| h + 1 - self.slots.len())
    }

    pub fn push(&mut self, entry: BufferEntry<N>) -> Result<(), BufferError> {
        match self.head {
            Some(h) if entry.step != h + 1 => {
                return Err(BufferError::NonConsecutive { expected: h + 1, got: entry.step });
            }
            None => self.first_step = entry.step,
            _ => {}
        }
        let step = entry.step;
        if self.slots.len() < self.capacity {
            self.slots.push(entry);
        } else {
            let idx = self.slot_of(step);
            self.slots[idx] = entry;
        }
        self.head = Some(step);
        Ok(())
    }

    fn slot_of(&self, step: usize) -> usize {
        (step - self.first_step) % self.capacity
    }

    fn contains(&self, step: usize) -> bool {
        match (self.oldest(), self.head) {
            (Some(o), Some(h)) => (o..=h).contains(&step),
            _ => false,
        }
    }

    pub fn lookup(&self, step: usize) -> Result<&BufferEntry<N>, BufferError> {
        if !self.contains(step) {
            return Err(BufferError::NotRetained(step));
        }
        Ok(&self.slots[self.slot_of(step)])
    }

    pub fn lookup_mut(&mut self, step: usize) -> Result<&mut BufferEntry<N>, BufferError> {
        if !self.contains(step) {
            return Err(BufferError::NotRetained(step));
        }
        let idx = self.slot_of(step);
        Ok(&mut self.slots[idx])
    }

    /// `F_to * ... * F_(from+1)`; identity when `from == to`.
    pub fn stm_product(&self, from: usize, to: usize) -> Result<SMatrix<f64, N, N>, BufferError> {
        if from > to {
            return Err(BufferError::InvalidRange { from, to });
        }
        let mut phi = SMatrix::<f64, N, N>::identity();
        if from == to {
            return Ok(phi);
        }
        if !self.contains(from + 1) {
            return Err(BufferError::NotRetained(from + 1));
        }
        if !self.contains(to) {
            return Err(BufferError::NotRetained(to));
        }
        for k in from + 1..=to {
            phi = self.slots[self.slot_of(k)].f * phi;
        }
        Ok(phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};
    use proptest::prelude::*;

    fn entry(step: usize, f: Matrix2<f64>) -> BufferEntry<2> {
        BufferEntry {
            step,
            x_pred: Vector2::new(step as f64, 0.0),
            p_pred: Matrix2::identity(),
            f,
            q_eff: Matrix2::zeros(),
        }
    }

    fn filled(n: usize, capacity: usize) -> CircularBuffer<2> {
        let mut b = CircularBuffer::new(capacity).unwrap();
        for k in 0..n {
            b.push(entry(k, Matrix2::new(1.0, 0.01 * k as f64, 0.0, 1.0 + 0.001 * k as f64))).unwrap();
        }
        b
    }

    #[test]
    fn ring_overwrites_oldest() {
        let b = filled(101, 100);
        assert_eq!(b.lookup(0), Err(BufferError::NotRetained(0)));
        for k in 1..=100 {
            assert_eq!(b.lookup(k).unwrap().step, k);
        }
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn round_trip_and_boundaries() {
        let b = filled(250, 100);
        assert_eq!(b.lookup(200).unwrap(), &entry(200, b.lookup(200).unwrap().f));
        assert_eq!(b.lookup(249 - 100), Err(BufferError::NotRetained(149)));
        assert!(b.lookup(150).is_ok());
        assert_eq!(b.lookup(250), Err(BufferError::NotRetained(250)));
    }

    #[test]
    fn rejects_out_of_order_push() {
        let mut b = filled(3, 10);
        assert_eq!(b.push(entry(5, Matrix2::identity())), Err(BufferError::NonConsecutive { expected: 3, got: 5 }));
        assert_eq!(b.push(entry(2, Matrix2::identity())), Err(BufferError::NonConsecutive { expected: 3, got: 2 }));
    }

    #[test]
    fn buffer_may_start_at_any_step() {
        let mut b = CircularBuffer::<2>::new(4).unwrap();
        for k in 17..30 {
            b.push(entry(k, Matrix2::identity())).unwrap();
        }
        assert_eq!(b.oldest(), Some(26));
        assert_eq!(b.lookup(27).unwrap().step, 27);
    }

    #[test]
    fn capacity_covers_the_maximum_delay() {
        assert_eq!(CircularBuffer::<2>::capacity_for(30.0, 0.01), 3001);
    }

    #[test]
    fn empty_product_is_identity() {
        let b = filled(10, 10);
        assert_eq!(b.stm_product(4, 4).unwrap(), Matrix2::identity());
        assert_eq!(CircularBuffer::<2>::new(1).unwrap().stm_product(7, 7).unwrap(), Matrix2::identity());
    }

    #[test]
    fn two_step_product_by_hand() {
        let f1 = Matrix2::new(1.0, 2.0, 3.0, 4.0);
        let f2 = Matrix2::new(0.0, 1.0, -1.0, 0.5);
        let mut b = CircularBuffer::new(8).unwrap();
        b.push(entry(0, Matrix2::identity())).unwrap();
        b.push(entry(1, f1)).unwrap();
        b.push(entry(2, f2)).unwrap();
        // f2 * f1 = [[3, 4], [0.5, 0]]
        assert_eq!(b.stm_product(0, 2).unwrap(), Matrix2::new(3.0, 4.0, 0.5, 0.0));
    }

    #[test]
    fn identity_transitions_give_identity() {
        let mut b = CircularBuffer::new(50).unwrap();
        for k in 0..80 {
            b.push(entry(k, Matrix2::identity())).unwrap();
        }
        assert_eq!(b.stm_product(31, 79).unwrap(), Matrix2::identity());
    }

    #[test]
    fn product_needs_retained_range() {
        let b = filled(200, 100);
        assert!(b.stm_product(99, 150).is_ok());
        assert_eq!(b.stm_product(98, 150), Err(BufferError::NotRetained(99)));
        assert_eq!(b.stm_product(150, 200), Err(BufferError::NotRetained(200)));
    }

    proptest! {
        #[test]
        fn semigroup(a in 100usize..400, db in 0usize..100, dc in 0usize..100) {
            let b = filled(400, 300);
            let (bb, c) = (a + db, (a + db + dc).min(399));
            let bb = bb.min(c);
            let lhs = b.stm_product(a, c).unwrap();
            let rhs = b.stm_product(bb, c).unwrap() * b.stm_product(a, bb).unwrap();
            prop_assert!((lhs - rhs).amax() <= 1e-12 * lhs.amax().max(1.0));
        }
    }
}
