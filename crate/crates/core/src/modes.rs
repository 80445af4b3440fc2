//! Wave indices of the Stokes eigenbasis on the 2π-periodic torus.
//!
//! Real fields are stored on the canonical half-plane `k1 > 0 || (k1 == 0 && k2 > 0)`;
//! each stored wavevector carries one complex amplitude, i.e. one cosine and
//! one sine basis field. Modes are ordered by increasing eigenvalue `|k|^2`,
//! ties broken lexicographically on `(k1, k2)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A nonzero wavevector `k ∈ Z²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaveIndex {
    pub k1: i32,
    pub k2: i32,
}

impl WaveIndex {
    pub fn new(k1: i32, k2: i32) -> Result<Self> {
        if k1 == 0 && k2 == 0 {
            return Err(Error::InvalidIndex { k1, k2, k_max: 0 });
        }
        Ok(WaveIndex { k1, k2 })
    }

    /// Stokes eigenvalue `|k|^2`.
    pub fn eigenvalue(&self) -> i64 {
        let (a, b) = (self.k1 as i64, self.k2 as i64);
        a * a + b * b
    }

    pub fn magnitude(&self) -> f64 {
        (self.eigenvalue() as f64).sqrt()
    }

    pub fn is_canonical(&self) -> bool {
        self.k1 > 0 || (self.k1 == 0 && self.k2 > 0)
    }

    pub fn neg(&self) -> WaveIndex {
        WaveIndex {
            k1: -self.k1,
            k2: -self.k2,
        }
    }

    /// Representative in the canonical half-plane and the sign relating them.
    pub fn canonical(&self) -> (WaveIndex, f64) {
        if self.is_canonical() {
            (*self, 1.0)
        } else {
            (self.neg(), -1.0)
        }
    }

    /// Unit polarisation `(k2, -k1)/|k|`, orthogonal to `k`.
    pub fn direction(&self) -> [f64; 2] {
        let m = self.magnitude();
        [self.k2 as f64 / m, -(self.k1 as f64) / m]
    }

    pub fn fits(&self, k_max: usize) -> bool {
        self.k1.unsigned_abs() as usize <= k_max && self.k2.unsigned_abs() as usize <= k_max
    }
}

impl std::fmt::Display for WaveIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.k1, self.k2)
    }
}

/// The canonical, eigenvalue-ordered set of modes with `|k1|, |k2| <= k_max`.
#[derive(Debug)]
pub struct ModeSet {
    k_max: usize,
    modes: Vec<WaveIndex>,
    lookup: Vec<u32>,
}

const NO_MODE: u32 = u32::MAX;

impl ModeSet {
    /// Shared mode set for a resolution; identical resolutions share one allocation.
    pub fn shared(k_max: usize) -> Result<Arc<ModeSet>> {
        if k_max == 0 {
            return Err(Error::invalid("K_max must be at least 1"));
        }
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ModeSet>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("mode cache poisoned");
        Ok(guard
            .entry(k_max)
            .or_insert_with(|| Arc::new(ModeSet::build(k_max)))
            .clone())
    }

    fn build(k_max: usize) -> ModeSet {
        let km = k_max as i32;
        let mut modes: Vec<WaveIndex> = (0..=km)
            .flat_map(|k1| (-km..=km).map(move |k2| WaveIndex { k1, k2 }))
            .filter(|k| k.is_canonical())
            .collect();
        modes.sort_by_key(|k| (k.eigenvalue(), k.k1, k.k2));
        let side = 2 * k_max + 1;
        let mut lookup = vec![NO_MODE; (k_max + 1) * side];
        for (i, k) in modes.iter().enumerate() {
            lookup[k.k1 as usize * side + (k.k2 + km) as usize] = i as u32;
        }
        ModeSet {
            k_max,
            modes,
            lookup,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[WaveIndex] {
        &self.modes
    }

    pub fn get(&self, i: usize) -> WaveIndex {
        self.modes[i]
    }

    /// Position of a canonical wavevector in the ordering.
    pub fn index_of(&self, k: WaveIndex) -> Option<usize> {
        if !k.is_canonical() || !k.fits(self.k_max) {
            return None;
        }
        let side = 2 * self.k_max + 1;
        let slot = self.lookup[k.k1 as usize * side + (k.k2 + self.k_max as i32) as usize];
        (slot != NO_MODE).then_some(slot as usize)
    }

    /// Eigenvalue of the `j`-th mode (1-based), i.e. `λ_j`.
    pub fn lambda(&self, j: usize) -> Option<i64> {
        (j >= 1).then(|| self.modes.get(j - 1).map(|k| k.eigenvalue()))?
    }
}
