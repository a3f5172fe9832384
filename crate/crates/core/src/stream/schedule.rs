//! Keyframe creation, lifetime and blend ramp.

use crate::io::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyframeSchedule {
    pub spacing: usize,
    pub lifetime: usize,
    pub capacity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledKeyframe {
    pub created: usize,
    pub age: usize,
    /// `1 - age / lifetime`.
    pub blend: f64,
}

impl Default for KeyframeSchedule {
    fn default() -> Self {
        KeyframeSchedule {
            spacing: 5,
            lifetime: 10,
            capacity: 2,
        }
    }
}

impl KeyframeSchedule {
    pub fn from_config(cfg: &RunConfig) -> Self {
        KeyframeSchedule {
            spacing: cfg.keyframe_spacing.max(1),
            lifetime: cfg.keyframe_lifetime.max(1),
            capacity: cfg.keyframe_capacity,
        }
    }

    pub fn is_keyframe(&self, t: usize) -> bool {
        t % self.spacing == 0
    }

    pub fn blend(&self, age: usize) -> f64 {
        1.0 - age as f64 / self.lifetime as f64
    }

    /// Keyframes alive at frame `t` (including one created at `t`), oldest first.
    pub fn active(&self, t: usize) -> Vec<ScheduledKeyframe> {
        let newest = t - t % self.spacing;
        let mut out = Vec::new();
        let mut c = newest;
        loop {
            let age = t - c;
            if age >= self.lifetime || out.len() == self.capacity {
                break;
            }
            out.push(ScheduledKeyframe {
                created: c,
                age,
                blend: self.blend(age),
            });
            if c < self.spacing {
                break;
            }
            c -= self.spacing;
        }
        out.reverse();
        out
    }

    /// Keyframes created strictly before `t` that are still alive at `t`.
    pub fn history(&self, t: usize) -> Vec<ScheduledKeyframe> {
        self.active(t).into_iter().filter(|k| k.created < t).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let s = KeyframeSchedule::default();
        assert_eq!(
            s.active(0),
            vec![ScheduledKeyframe { created: 0, age: 0, blend: 1.0 }]
        );
        let a7 = s.active(7);
        assert_eq!(a7.iter().map(|k| (k.created, k.age)).collect::<Vec<_>>(), vec![(0, 7), (5, 2)]);
        assert!((a7[0].blend - 0.3).abs() < 1e-15 && (a7[1].blend - 0.8).abs() < 1e-15);
        assert_eq!(s.active(12).iter().map(|k| k.created).collect::<Vec<_>>(), vec![5, 10]);
        assert_eq!(s.active(5).len(), 2);
        assert_eq!(s.history(5).iter().map(|k| k.created).collect::<Vec<_>>(), vec![0]);
        assert!(s.history(0).is_empty());
    }

    #[test]
    fn invariants_over_a_long_run() {
        let s = KeyframeSchedule::default();
        for t in 0..=100 {
            let a = s.active(t);
            assert!(!a.is_empty() && a.len() <= 2);
            for w in a.windows(2) {
                assert_eq!(w[1].created - w[0].created, 5);
            }
            for k in &a {
                assert!(k.age < 10);
                assert_eq!(k.blend, 1.0 - k.age as f64 / 10.0);
            }
        }
    }
}
