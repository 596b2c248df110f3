//! A basis function is either a trainable [`BasisNet`] or a fixed closure.
//! Fixed bases have no parameters; they stand in for known closed forms
//! (exact stubs in tests, frozen factors in experiments).

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::nn::{BasisNet, ForwardCache};

type BasisFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

pub struct FixedBasis {
    name: String,
    input_dim: usize,
    f: Arc<BasisFn>,
    evals: AtomicU64,
}

impl Clone for FixedBasis {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            input_dim: self.input_dim,
            f: Arc::clone(&self.f),
            evals: AtomicU64::new(0),
        }
    }
}

impl fmt::Debug for FixedBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FixedBasis")
            .field("name", &self.name)
            .field("input_dim", &self.input_dim)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Basis {
    Net(BasisNet),
    Fixed(FixedBasis),
}

pub enum BasisCache {
    Net(ForwardCache),
    Fixed(Vec<f64>),
}

impl BasisCache {
    pub fn outputs(&self) -> &[f64] {
        match self {
            BasisCache::Net(c) => c.outputs(),
            BasisCache::Fixed(v) => v,
        }
    }
}

impl Basis {
    pub fn fixed<F>(name: &str, input_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Basis::Fixed(FixedBasis {
            name: name.to_string(),
            input_dim,
            f: Arc::new(f),
            evals: AtomicU64::new(0),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Basis::Net(n) => n.input_dim(),
            Basis::Fixed(f) => f.input_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Basis::Net(n) => n.num_params(),
            Basis::Fixed(_) => 0,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Basis::Net(n) => n.params(),
            Basis::Fixed(_) => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Basis::Net(n) => n.params_mut(),
            Basis::Fixed(_) => &mut [],
        }
    }

    pub fn as_net(&self) -> Option<&BasisNet> {
        match self {
            Basis::Net(n) => Some(n),
            Basis::Fixed(_) => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Basis::Net(n) => n.eval(x),
            Basis::Fixed(b) => {
                b.evals.fetch_add(1, Ordering::Relaxed);
                (b.f)(x)
            }
        }
    }

    pub fn eval1(&self, x: f64) -> f64 {
        self.eval(&[x])
    }

    pub fn forward(&self, xs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Basis::Net(n) => n.forward(xs),
            Basis::Fixed(b) => {
                let d = b.input_dim;
                if xs.len() % d != 0 {
                    return Err(Error::Shape(format!(
                        "batch of {} values is not a multiple of input dim {d}",
                        xs.len()
                    )));
                }
                b.evals.fetch_add((xs.len() / d) as u64, Ordering::Relaxed);
                Ok(xs.chunks(d).map(|x| (b.f)(x)).collect())
            }
        }
    }

    pub fn forward_cached(&self, xs: &[f64]) -> Result<BasisCache> {
        match self {
            Basis::Net(n) => Ok(BasisCache::Net(n.forward_cached(xs)?)),
            Basis::Fixed(_) => Ok(BasisCache::Fixed(self.forward(xs)?)),
        }
    }

    /// Forward pass, keeping the cache only when a reverse pass will follow.
    pub fn run(&self, xs: &[f64], keep: bool) -> Result<(Vec<f64>, Option<BasisCache>)> {
        if keep {
            let c = self.forward_cached(xs)?;
            Ok((c.outputs().to_vec(), Some(c)))
        } else {
            Ok((self.forward(xs)?, None))
        }
    }

    pub fn backward(&self, cache: &BasisCache, adjoints: &[f64], grad: &mut [f64]) -> Result<()> {
        match (self, cache) {
            (Basis::Net(n), BasisCache::Net(c)) => n.backward(c, adjoints, grad),
            (Basis::Fixed(_), BasisCache::Fixed(_)) => Ok(()),
            _ => Err(Error::Shape("cache does not belong to this basis".into())),
        }
    }

    pub fn eval_count(&self) -> u64 {
        match self {
            Basis::Net(n) => n.eval_count(),
            Basis::Fixed(b) => b.evals.load(Ordering::Relaxed),
        }
    }

    pub fn reset_eval_count(&self) {
        match self {
            Basis::Net(n) => n.reset_eval_count(),
            Basis::Fixed(b) => b.evals.store(0, Ordering::Relaxed),
        }
    }
}

impl From<BasisNet> for Basis {
    fn from(n: BasisNet) -> Self {
        Basis::Net(n)
    }
}
