use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpairPolicy {
    pub drop_rate: f64,
    pub delay_ms: u64,
}

impl ImpairPolicy {
    pub const TRANSPARENT: ImpairPolicy = ImpairPolicy {
        drop_rate: 0.0,
        delay_ms: 0,
    };

    pub fn is_lossy(&self) -> bool {
        self.drop_rate > 0.0
    }
}

impl Default for ImpairPolicy {
    fn default() -> Self {
        ImpairPolicy::TRANSPARENT
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("drop rate {0} is outside [0, 1]")]
pub struct InvalidPolicy(pub f64);

/// What happens to one frame crossing an impaired channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Deliver { delay_ms: u64 },
    Drop,
}

/// Seeded loss and delay for one channel.
///
/// A lossy policy draws one `f64` in `[0, 1)` per frame from a ChaCha8
/// stream seeded with the channel seed; the frame is dropped when the draw
/// is below the drop rate. Lossless policies draw nothing.
#[derive(Debug, Clone)]
pub struct Impairment {
    policy: ImpairPolicy,
    rng: ChaCha8Rng,
}

impl Impairment {
    pub fn new(seed: u64) -> Impairment {
        Impairment {
            policy: ImpairPolicy::TRANSPARENT,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn policy(&self) -> ImpairPolicy {
        self.policy
    }

    pub fn set_policy(&mut self, policy: ImpairPolicy) -> Result<(), InvalidPolicy> {
        if !(0.0..=1.0).contains(&policy.drop_rate) || policy.drop_rate.is_nan() {
            return Err(InvalidPolicy(policy.drop_rate));
        }
        self.policy = policy;
        Ok(())
    }

    pub fn fate(&mut self) -> Fate {
        if self.policy.is_lossy() && self.rng.random::<f64>() < self.policy.drop_rate {
            return Fate::Drop;
        }
        Fate::Deliver {
            delay_ms: self.policy.delay_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_loss() {
        let mut imp = Impairment::new(3);
        imp.set_policy(ImpairPolicy {
            drop_rate: 1.0,
            delay_ms: 0,
        })
        .unwrap();
        assert!((0..500).all(|_| imp.fate() == Fate::Drop));
    }

    #[test]
    fn identity_policy() {
        let mut imp = Impairment::new(3);
        assert!((0..500).all(|_| imp.fate() == Fate::Deliver { delay_ms: 0 }));
    }

    #[test]
    fn delay_applies() {
        let mut imp = Impairment::new(3);
        imp.set_policy(ImpairPolicy {
            drop_rate: 0.0,
            delay_ms: 250,
        })
        .unwrap();
        assert_eq!(imp.fate(), Fate::Deliver { delay_ms: 250 });
    }

    #[test]
    fn half_loss_matches_replayed_stream() {
        let seed = 42;
        let mut imp = Impairment::new(seed);
        imp.set_policy(ImpairPolicy {
            drop_rate: 0.5,
            delay_ms: 0,
        })
        .unwrap();
        let delivered = (0..1000).filter(|_| imp.fate() != Fate::Drop).count();

        let mut oracle = ChaCha8Rng::seed_from_u64(seed);
        let expected = (0..1000).filter(|_| oracle.random::<f64>() >= 0.5).count();
        assert_eq!(delivered, expected);
        assert!((400..600).contains(&delivered));
    }

    #[test]
    fn out_of_range_rate_rejected() {
        let mut imp = Impairment::new(0);
        for bad in [-0.1, 1.5, f64::NAN] {
            assert!(imp
                .set_policy(ImpairPolicy {
                    drop_rate: bad,
                    delay_ms: 0
                })
                .is_err());
        }
    }
}
