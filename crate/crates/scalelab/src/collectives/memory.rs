//! In-memory collectives for thread workers.
//!
//! The reducer is canonical: the last rank to contribute computes one
//! pairwise-tree sum over the contributions in rank order and divides by
//! N, so every rank receives a bitwise-identical tensor and the result
//! is a pure function of the rank-ordered inputs, independent of arrival
//! timing.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::numerics::{tree_sum_tensors_by, Tensor};

struct ReduceRound {
    round: u64,
    slots: Vec<Option<Tensor>>,
    result: Option<Arc<Tensor>>,
    taken: Vec<bool>,
    poisoned: Option<String>,
}

struct BarrierRound {
    round: u64,
    entered: Vec<bool>,
    count: usize,
    left: usize,
}

struct UniformRound {
    round: u64,
    slots: Vec<Option<u64>>,
    result: Option<bool>,
    taken: Vec<bool>,
}

struct Shared {
    n: usize,
    timeout: Duration,
    reduce: Mutex<ReduceRound>,
    reduce_cv: Condvar,
    barrier: Mutex<BarrierRound>,
    barrier_cv: Condvar,
    uniform: Mutex<UniformRound>,
    uniform_cv: Condvar,
}

/// One rank's handle onto an in-memory worker group.
pub struct InMemoryGroup {
    shared: Arc<Shared>,
    rank: usize,
    reduce_round: u64,
    barrier_round: u64,
    uniform_round: u64,
}

impl InMemoryGroup {
    /// Create a group of `n` ranks with the default 30 s timeout.
    pub fn create(n: usize) -> Vec<InMemoryGroup> {
        Self::create_with_timeout(n, Duration::from_secs(30))
    }

    pub fn create_with_timeout(n: usize, timeout: Duration) -> Vec<InMemoryGroup> {
        assert!(n >= 1, "group needs at least one rank");
        let shared = Arc::new(Shared {
            n,
            timeout,
            reduce: Mutex::new(ReduceRound {
                round: 0,
                slots: vec![None; n],
                result: None,
                taken: vec![false; n],
                poisoned: None,
            }),
            reduce_cv: Condvar::new(),
            barrier: Mutex::new(BarrierRound {
                round: 0,
                entered: vec![false; n],
                count: 0,
                left: 0,
            }),
            barrier_cv: Condvar::new(),
            uniform: Mutex::new(UniformRound {
                round: 0,
                slots: vec![None; n],
                result: None,
                taken: vec![false; n],
            }),
            uniform_cv: Condvar::new(),
        });
        (0..n)
            .map(|rank| InMemoryGroup {
                shared: Arc::clone(&shared),
                rank,
                reduce_round: 0,
                barrier_round: 0,
                uniform_round: 0,
            })
            .collect()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.n
    }

    /// Mean of all ranks' contributions: tree sum in rank order divided
    /// by N. Bitwise identical on every rank.
    pub fn allreduce_mean(&mut self, contribution: &Tensor) -> Result<Tensor> {
        let sh = &*self.shared;
        let my_round = self.reduce_round;
        self.reduce_round += 1;

        let mut st = sh.reduce.lock().expect("reduce lock");
        // wait for earlier rounds to drain
        while st.round < my_round {
            let (next, res) = sh
                .reduce_cv
                .wait_timeout(st, sh.timeout)
                .expect("reduce wait");
            st = next;
            if res.timed_out() && st.round < my_round {
                let missing = (0..sh.n).filter(|&r| !st.taken[r]).collect();
                return Err(Error::CollectiveTimeout { missing });
            }
        }
        if let Some(msg) = &st.poisoned {
            return Err(Error::Wire(msg.clone()));
        }

        // deposit
        if let Some(first) = st.slots.iter().flatten().next() {
            if first.shape() != contribution.shape() {
                let msg = format!(
                    "rank {} contributed shape {:?}, group expects {:?}",
                    self.rank,
                    contribution.shape(),
                    first.shape()
                );
                st.poisoned = Some(msg.clone());
                sh.reduce_cv.notify_all();
                return Err(Error::ShapeMismatch {
                    expected: first.shape().to_vec(),
                    actual: contribution.shape().to_vec(),
                });
            }
        }
        st.slots[self.rank] = Some(contribution.clone());

        if st.slots.iter().all(Option::is_some) {
            let mut summed = tree_sum_tensors_by(sh.n, |r| {
                Ok(st.slots[r].as_ref().expect("slot populated").clone())
            })?;
            let n = sh.n as f64;
            for v in summed.data_mut() {
                *v /= n;
            }
            st.result = Some(Arc::new(summed));
            sh.reduce_cv.notify_all();
        } else {
            while st.result.is_none() && st.poisoned.is_none() {
                let (next, res) = sh
                    .reduce_cv
                    .wait_timeout(st, sh.timeout)
                    .expect("reduce wait");
                st = next;
                if res.timed_out() && st.result.is_none() && st.poisoned.is_none() {
                    let missing = (0..sh.n).filter(|&r| st.slots[r].is_none()).collect();
                    return Err(Error::CollectiveTimeout { missing });
                }
            }
        }
        if let Some(msg) = &st.poisoned {
            return Err(Error::Wire(msg.clone()));
        }

        let out = st.result.as_ref().expect("result present").as_ref().clone();
        st.taken[self.rank] = true;
        if st.taken.iter().all(|&t| t) {
            st.round += 1;
            st.slots.iter_mut().for_each(|s| *s = None);
            st.result = None;
            st.taken.iter_mut().for_each(|t| *t = false);
            sh.reduce_cv.notify_all();
        }
        Ok(out)
    }

    /// No rank returns until every rank has entered.
    pub fn barrier(&mut self) -> Result<()> {
        let sh = &*self.shared;
        let my_round = self.barrier_round;
        self.barrier_round += 1;

        let mut st = sh.barrier.lock().expect("barrier lock");
        while st.round < my_round {
            let (next, res) = sh
                .barrier_cv
                .wait_timeout(st, sh.timeout)
                .expect("barrier wait");
            st = next;
            if res.timed_out() && st.round < my_round {
                let missing = (0..sh.n).filter(|&r| !st.entered[r]).collect();
                return Err(Error::CollectiveTimeout { missing });
            }
        }
        st.entered[self.rank] = true;
        st.count += 1;
        if st.count == sh.n {
            sh.barrier_cv.notify_all();
        } else {
            while st.round == my_round && st.count < sh.n {
                let (next, res) = sh
                    .barrier_cv
                    .wait_timeout(st, sh.timeout)
                    .expect("barrier wait");
                st = next;
                if res.timed_out() && st.round == my_round && st.count < sh.n {
                    let missing = (0..sh.n).filter(|&r| !st.entered[r]).collect();
                    return Err(Error::CollectiveTimeout { missing });
                }
            }
        }
        st.left += 1;
        if st.left == sh.n {
            st.round += 1;
            st.entered.iter_mut().for_each(|e| *e = false);
            st.count = 0;
            st.left = 0;
            sh.barrier_cv.notify_all();
        }
        Ok(())
    }

    /// True when every rank submitted the same value. Exact comparison,
    /// used for replica-coherence checks.
    pub fn check_uniform(&mut self, value: u64) -> Result<bool> {
        let sh = &*self.shared;
        let my_round = self.uniform_round;
        self.uniform_round += 1;

        let mut st = sh.uniform.lock().expect("uniform lock");
        while st.round < my_round {
            let (next, res) = sh
                .uniform_cv
                .wait_timeout(st, sh.timeout)
                .expect("uniform wait");
            st = next;
            if res.timed_out() && st.round < my_round {
                let missing = (0..sh.n).filter(|&r| !st.taken[r]).collect();
                return Err(Error::CollectiveTimeout { missing });
            }
        }
        st.slots[self.rank] = Some(value);
        if st.slots.iter().all(Option::is_some) {
            let first = st.slots[0].expect("slot 0");
            let equal = st.slots.iter().all(|s| s.expect("slot") == first);
            st.result = Some(equal);
            sh.uniform_cv.notify_all();
        } else {
            while st.result.is_none() {
                let (next, res) = sh
                    .uniform_cv
                    .wait_timeout(st, sh.timeout)
                    .expect("uniform wait");
                st = next;
                if res.timed_out() && st.result.is_none() {
                    let missing = (0..sh.n).filter(|&r| st.slots[r].is_none()).collect();
                    return Err(Error::CollectiveTimeout { missing });
                }
            }
        }
        let out = st.result.expect("uniform result");
        st.taken[self.rank] = true;
        if st.taken.iter().all(|&t| t) {
            st.round += 1;
            st.slots.iter_mut().for_each(|s| *s = None);
            st.result = None;
            st.taken.iter_mut().for_each(|t| *t = false);
            sh.uniform_cv.notify_all();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{hash_f64s, tree_sum_tensors};
    use std::time::Instant;

    fn run_group<F, T>(n: usize, f: F) -> Vec<T>
    where
        F: Fn(InMemoryGroup) -> T + Send + Sync + Clone + 'static,
        T: Send + 'static,
    {
        let handles = InMemoryGroup::create(n);
        let mut joins = Vec::new();
        for h in handles {
            let f = f.clone();
            joins.push(std::thread::spawn(move || f(h)));
        }
        joins.into_iter().map(|j| j.join().unwrap()).collect()
    }

    #[test]
    fn single_rank_returns_contribution_unchanged() {
        let mut g = InMemoryGroup::create(1).remove(0);
        let t = Tensor::from_flat(vec![0.1, 0.2, 0.3]);
        let r = g.allreduce_mean(&t).unwrap();
        for (a, b) in r.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn two_rank_arithmetic() {
        let out = run_group(2, |mut g| {
            let t = if g.rank() == 0 {
                Tensor::from_flat(vec![2.0, 4.0])
            } else {
                Tensor::from_flat(vec![4.0, 8.0])
            };
            g.allreduce_mean(&t).unwrap().into_data()
        });
        assert_eq!(out[0], vec![3.0, 6.0]);
        assert_eq!(out[1], vec![3.0, 6.0]);
    }

    #[test]
    fn four_ranks_match_serial_tree_oracle() {
        let contributions: Vec<Tensor> = (0..4)
            .map(|r| {
                Tensor::from_flat(
                    (0..37).map(|i| ((r * 37 + i) as f64).sin() * 0.831).collect(),
                )
            })
            .collect();
        let expect = {
            let mut s = tree_sum_tensors(&contributions).unwrap();
            for v in s.data_mut() {
                *v /= 4.0;
            }
            s
        };
        let contributions2 = contributions.clone();
        let outs = run_group(4, move |mut g| {
            let mine = contributions2[g.rank()].clone();
            // stagger arrivals to prove order-insensitivity
            std::thread::sleep(Duration::from_millis(7 * g.rank() as u64));
            g.allreduce_mean(&mine).unwrap()
        });
        let h0 = hash_f64s(outs[0].data());
        for o in &outs {
            assert_eq!(hash_f64s(o.data()), h0, "ranks must agree bitwise");
            for (a, b) in o.data().iter().zip(expect.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn repeated_rounds_are_consistent() {
        let outs = run_group(3, |mut g| {
            let mut hashes = Vec::new();
            for round in 0..20 {
                let t = Tensor::from_flat(vec![g.rank() as f64 + round as f64]);
                let r = g.allreduce_mean(&t).unwrap();
                hashes.push(r.data()[0].to_bits());
            }
            hashes
        });
        assert_eq!(outs[0], outs[1]);
        assert_eq!(outs[1], outs[2]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let outs = run_group(2, |mut g| {
            let t = if g.rank() == 0 {
                Tensor::from_flat(vec![1.0, 2.0])
            } else {
                Tensor::from_flat(vec![1.0])
            };
            g.allreduce_mean(&t).map(|_| ())
        });
        assert!(outs.iter().any(|o| o.is_err()));
    }

    #[test]
    fn timeout_names_the_missing_rank() {
        let handles = InMemoryGroup::create_with_timeout(2, Duration::from_millis(50));
        let mut it = handles.into_iter();
        let mut h0 = it.next().unwrap();
        let _h1 = it.next().unwrap(); // rank 1 never participates
        match h0.allreduce_mean(&Tensor::from_flat(vec![1.0])) {
            Err(Error::CollectiveTimeout { missing }) => assert_eq!(missing, vec![1]),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn barrier_waits_for_stragglers() {
        let outs = run_group(2, |mut g| {
            let start = Instant::now();
            if g.rank() == 1 {
                std::thread::sleep(Duration::from_millis(50));
            }
            g.barrier().unwrap();
            start.elapsed()
        });
        assert!(outs[0] >= Duration::from_millis(45), "rank 0 waited {:?}", outs[0]);
    }

    #[test]
    fn barrier_single_rank_is_immediate() {
        let mut g = InMemoryGroup::create(1).remove(0);
        let t = Instant::now();
        g.barrier().unwrap();
        assert!(t.elapsed() < Duration::from_millis(10));
    }

    #[test]
    fn hundred_consecutive_barriers() {
        run_group(4, |mut g| {
            for _ in 0..100 {
                g.barrier().unwrap();
            }
        });
    }

    #[test]
    fn uniform_check_detects_divergence() {
        let outs = run_group(3, |mut g| {
            let same = g.check_uniform(42).unwrap();
            let differ = g.check_uniform(g.rank() as u64).unwrap();
            (same, differ)
        });
        for (same, differ) in outs {
            assert!(same);
            assert!(!differ);
        }
    }
}
