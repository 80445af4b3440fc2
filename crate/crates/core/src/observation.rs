//! Random space-time designs and noisy Eulerian velocity measurements.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldEvaluator, SpectralField};
use crate::solver::{Solver, SolverConfig, SolverRecord};

const FILE_HEADER: &str = "# nsda observations v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub n: usize,
    pub t0: f64,
    pub t: f64,
    /// All measurements at time `t`.
    #[serde(default)]
    pub single_time: bool,
    /// Draw this many shared measurement times, each carrying about `n / m`
    /// spatial points; `None` gives every observation its own time.
    #[serde(default)]
    pub time_groups: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl DesignSpec {
    pub fn new(n: usize, t0: f64, t: f64, seed: u64) -> Self {
        DesignSpec {
            n,
            t0,
            t,
            single_time: false,
            time_groups: None,
            seed,
        }
    }

    pub fn single_time(n: usize, t: f64, seed: u64) -> Self {
        DesignSpec {
            n,
            t0: t,
            t,
            single_time: true,
            time_groups: None,
            seed,
        }
    }

    pub fn grouped(mut self, m: usize) -> Self {
        self.time_groups = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t.is_finite() && 0.0 <= self.t0 && self.t0 <= self.t) {
            return Err(Error::invalid(format!(
                "design needs 0 <= T0 <= T, got T0 = {}, T = {}",
                self.t0, self.t
            )));
        }
        if !self.single_time && self.t0 == self.t {
            return Err(Error::invalid("T0 = T requires the single-time design"));
        }
        if self.single_time && self.t <= 0.0 {
            return Err(Error::invalid("single-time design needs T > 0"));
        }
        if self.time_groups == Some(0) {
            return Err(Error::invalid("time_groups must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesignPoint {
    /// Position in the original draw sequence.
    pub draw: usize,
    pub t: f64,
    pub x: [f64; 2],
}

/// Design points sorted by time (ties in draw order).
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub spec: DesignSpec,
    pub points: Vec<DesignPoint>,
}

impl Design {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    /// Draw order: `order()[i]` is the sorted index of draw `i`.
    pub fn order(&self) -> Vec<usize> {
        let mut inv = vec![0; self.points.len()];
        for (i, p) in self.points.iter().enumerate() {
            inv[p.draw] = i;
        }
        inv
    }
}

fn uniform_time(rng: &mut ChaCha8Rng, t0: f64, t: f64) -> f64 {
    // (T0, T]: reflect [0,1) so the open end sits at T0.
    t - (t - t0) * rng.random::<f64>()
}

pub fn draw_design(spec: &DesignSpec) -> Result<Design> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let group_times: Option<Vec<f64>> = match (spec.single_time, spec.time_groups) {
        (false, Some(m)) => Some((0..m).map(|_| uniform_time(&mut rng, spec.t0, spec.t)).collect()),
        _ => None,
    };
    let mut points: Vec<DesignPoint> = (0..spec.n)
        .map(|draw| {
            let t = if spec.single_time {
                spec.t
            } else if let Some(g) = &group_times {
                g[draw % g.len()]
            } else {
                uniform_time(&mut rng, spec.t0, spec.t)
            };
            let x = [2.0 * PI * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>()];
            DesignPoint { draw, t, x }
        })
        .collect();
    points.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.draw.cmp(&b.draw)));
    Ok(Design {
        spec: spec.clone(),
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub x: [f64; 2],
    pub y: [f64; 2],
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub theta_hash: String,
    #[serde(default)]
    pub theta_seed: Option<u64>,
    pub solver_hash: String,
    pub solver: SolverRecord,
    pub design: DesignSpec,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    /// Rows in time order.
    pub rows: Vec<Observation>,
    pub noise_sd: f64,
    pub provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    noise_sd: f64,
    rows: usize,
    #[serde(default)]
    provenance: Option<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    t: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl ObservationSet {
    pub fn empty() -> Self {
        ObservationSet {
            rows: Vec::new(),
            noise_sd: 1.0,
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn max_time(&self) -> f64 {
        self.rows.iter().map(|r| r.t).fold(0.0, f64::max)
    }

    pub fn is_time_sorted(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].t <= w[1].t)
    }

    /// Manifest block followed by `t,x1,x2,y1,y2` rows.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{FILE_HEADER}")?;
        let manifest = Manifest {
            noise_sd: self.noise_sd,
            rows: self.rows.len(),
            provenance: self.provenance.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::format("observation manifest", e.to_string()))?;
        for line in text.lines() {
            writeln!(w, "# {line}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        for r in &self.rows {
            csv.serialize(Row {
                t: r.t,
                x1: r.x[0],
                x2: r.x[1],
                y1: r.y[0],
                y2: r.y[1],
            })
            .map_err(|e| Error::format("observation row", e.to_string()))?;
        }
        if self.rows.is_empty() {
            csv.write_record(["t", "x1", "x2", "y1", "y2"])
                .map_err(|e| Error::format("observation row", e.to_string()))?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut manifest = String::new();
        let mut body = String::new();
        let mut first = true;
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            if first {
                if line.trim() != FILE_HEADER {
                    return Err(Error::format("observation file", format!("line 1: expected header {FILE_HEADER:?}")));
                }
                first = false;
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if !body.is_empty() {
                    return Err(Error::format("observation file", format!("line {}: manifest after data", no + 1)));
                }
                manifest.push_str(rest.strip_prefix(' ').unwrap_or(rest));
                manifest.push('\n');
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        if first {
            return Err(Error::format("observation file", "empty input"));
        }
        let manifest: Manifest =
            toml::from_str(&manifest).map_err(|e| Error::format("observation manifest", e.to_string()))?;
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<Row>() {
            let r = rec.map_err(|e| Error::format("observation row", e.to_string()))?;
            rows.push(Observation {
                t: r.t,
                x: [r.x1, r.x2],
                y: [r.y1, r.y2],
            });
        }
        if rows.len() != manifest.rows {
            return Err(Error::format(
                "observation file",
                format!("manifest announces {} rows, found {}", manifest.rows, rows.len()),
            ));
        }
        Ok(ObservationSet {
            rows,
            noise_sd: manifest.noise_sd,
            provenance: manifest.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }
}

/// Velocity `u_θ(t_i, X_i)` for each design point, in design order.
pub fn forward_values(theta: &SpectralField, design: &Design, cfg: &SolverConfig) -> Result<Vec<[f64; 2]>> {
    let times = design.times();
    evaluate_at(theta, &times, |i| design.points[i].x, cfg)
}

/// One forward solve landing on the sorted `times`; `point(i)` gives the location of row `i`.
pub(crate) fn evaluate_at(
    theta: &SpectralField,
    times: &[f64],
    point: impl Fn(usize) -> [f64; 2],
    cfg: &SolverConfig,
) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(times.len());
    let mut solver = Solver::new(cfg)?;
    let mut cached: Option<(f64, FieldEvaluator)> = None;
    solver.solve_visit(theta, times, |i, t, u| {
        if cached.as_ref().map(|c| c.0) != Some(t) {
            cached = Some((t, FieldEvaluator::new(u)));
        }
        out.push(cached.as_ref().expect("set above").1.eval(point(i)));
        Ok(())
    })?;
    Ok(out)
}

/// Noise-free values plus i.i.d. `N(0, noise_sd² I)` noise. Noise is drawn in the
/// original draw order, so it does not depend on how the design is sorted.
pub fn synthesize(
    theta: &SpectralField,
    design: &Design,
    cfg: &SolverConfig,
    noise_seed: u64,
    noise_sd: f64,
) -> Result<ObservationSet> {
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::invalid(format!("noise sd must be nonnegative, got {noise_sd}")));
    }
    if design.points.iter().any(|p| p.t > cfg.horizon) {
        return Err(Error::invalid("design times exceed the solver horizon"));
    }
    let clean = forward_values(theta, design, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise: Vec<[f64; 2]> = (0..design.len())
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [a, b]
        })
        .collect();
    let rows = design
        .points
        .iter()
        .zip(clean)
        .map(|(p, u)| {
            let e = noise[p.draw];
            Observation {
                t: p.t,
                x: p.x,
                y: [u[0] + noise_sd * e[0], u[1] + noise_sd * e[1]],
            }
        })
        .collect();
    Ok(ObservationSet {
        rows,
        noise_sd,
        provenance: Some(Provenance {
            theta_hash: theta.content_hash(),
            theta_seed: None,
            solver_hash: cfg.hash(),
            solver: cfg.record(),
            design: design.spec.clone(),
            noise_seed,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::tests::pseudo_random_field;
    use crate::modes::WaveIndex;
    use num_complex::Complex64;

    fn mean_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    fn heat_planted(j: i32, k_max: usize) -> SpectralField {
        let mut u = SpectralField::zeros(k_max).unwrap();
        u.set_coeff(WaveIndex::new(j, -j).unwrap(), Complex64::new(-2.0 * PI / (j * j) as f64, 0.0))
            .unwrap();
        u
    }

    #[test]
    fn single_time_design() {
        let d = draw_design(&DesignSpec::single_time(50, 0.3, 1)).unwrap();
        assert!(d.points.iter().all(|p| p.t == 0.3));
    }

    #[test]
    fn design_marginals_are_uniform() {
        let d = draw_design(&DesignSpec::new(100_000, 0.1, 0.5, 7)).unwrap();
        let t: Vec<f64> = d.points.iter().map(|p| p.t).collect();
        let (m, se) = mean_se(&t);
        assert!((m - 0.3).abs() < 3.0 * se);
        assert!(t.iter().all(|&s| s > 0.1 && s <= 0.5));
        for c in 0..2 {
            let x: Vec<f64> = d.points.iter().map(|p| p.x[c]).collect();
            let (m, se) = mean_se(&x);
            assert!((m - PI).abs() < 3.0 * se);
            assert!(x.iter().all(|&s| (0.0..2.0 * PI).contains(&s)));
        }
    }

    #[test]
    fn design_is_sorted_with_recorded_order() {
        let d = draw_design(&DesignSpec::new(200, 0.0, 1.0, 3)).unwrap();
        assert!(d.points.windows(2).all(|w| w[0].t <= w[1].t));
        let order = d.order();
        for (draw, &pos) in order.iter().enumerate() {
            assert_eq!(d.points[pos].draw, draw);
        }
    }

    #[test]
    fn grouped_design_shares_times() {
        let d = draw_design(&DesignSpec::new(120, 0.1, 0.5, 3).grouped(6)).unwrap();
        let mut t = d.times();
        t.dedup();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn invalid_designs_rejected() {
        assert!(draw_design(&DesignSpec::new(10, 0.5, 0.1, 0)).is_err());
        assert!(draw_design(&DesignSpec::new(10, 0.5, 0.5, 0)).is_err());
        assert!(draw_design(&DesignSpec::new(10, 0.1, 0.5, 0).grouped(0)).is_err());
    }

    #[test]
    fn zero_truth_zero_noise_gives_zero_data() {
        let cfg = SolverConfig::new(1.0, 4, 0.5).unwrap();
        let d = draw_design(&DesignSpec::new(30, 0.1, 0.5, 1)).unwrap();
        let obs = synthesize(&SpectralField::zeros(4).unwrap(), &d, &cfg, 2, 0.0).unwrap();
        assert!(obs.rows.iter().all(|r| r.y == [0.0, 0.0]));
    }

    #[test]
    fn heat_planted_data_match_closed_form() {
        let j = 3;
        let cfg = SolverConfig::new(0.5, 8, 0.5).unwrap();
        let d = draw_design(&DesignSpec::new(200, 0.1, 0.5, 4)).unwrap();
        let obs = synthesize(&heat_planted(j, 8), &d, &cfg, 5, 0.0).unwrap();
        let jf = j as f64;
        for r in &obs.rows {
            let want = (-jf * jf * r.t).exp() / (jf * jf) * (jf * (r.x[0] - r.x[1])).cos();
            assert!((r.y[0] - want).abs() < 1e-6 && (r.y[1] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_has_unit_law() {
        let cfg = SolverConfig::new(1.0, 4, 0.5).unwrap();
        let theta = pseudo_random_field(4, 3);
        let d = draw_design(&DesignSpec::new(10_000, 0.1, 0.5, 8).grouped(20)).unwrap();
        let clean = synthesize(&theta, &d, &cfg, 1, 0.0).unwrap();
        let noisy = synthesize(&theta, &d, &cfg, 1, 1.0).unwrap();
        for c in 0..2 {
            let res: Vec<f64> = noisy.rows.iter().zip(&clean.rows).map(|(a, b)| a.y[c] - b.y[c]).collect();
            let (m, se) = mean_se(&res);
            assert!(m.abs() < 3.0 * se);
            let sq: Vec<f64> = res.iter().map(|e| e * e).collect();
            let (v, se) = mean_se(&sq);
            assert!((v - 1.0).abs() < 3.0 * se);
        }
    }

    #[test]
    fn synthesis_is_reproducible_and_order_independent() {
        let cfg = SolverConfig::new(1.0, 4, 0.5).unwrap();
        let theta = pseudo_random_field(4, 1);
        let d = draw_design(&DesignSpec::new(40, 0.1, 0.5, 2)).unwrap();
        let a = synthesize(&theta, &d, &cfg, 9, 1.0).unwrap();
        assert_eq!(a, synthesize(&theta, &d, &cfg, 9, 1.0).unwrap());
        // Same points, different sort order: identical readings per point.
        let mut shuffled = d.clone();
        shuffled.points.reverse();
        shuffled.points.sort_by(|a, b| a.t.total_cmp(&b.t).then(b.draw.cmp(&a.draw)));
        let b = synthesize(&theta, &shuffled, &cfg, 9, 1.0).unwrap();
        for (p, r) in shuffled.points.iter().zip(&b.rows) {
            let i = d.order()[p.draw];
            assert_eq!(a.rows[i].y, r.y);
        }
    }

    #[test]
    fn file_roundtrip_is_exact() {
        let cfg = SolverConfig::new(1.0, 4, 0.5).unwrap();
        let d = draw_design(&DesignSpec::new(25, 0.1, 0.5, 2)).unwrap();
        let obs = synthesize(&pseudo_random_field(4, 2), &d, &cfg, 3, 0.7).unwrap();
        let mut buf = Vec::new();
        obs.write(&mut buf).unwrap();
        let back = ObservationSet::read(buf.as_slice()).unwrap();
        assert_eq!(back, obs);
        let mut empty = Vec::new();
        ObservationSet::empty().write(&mut empty).unwrap();
        assert_eq!(ObservationSet::read(empty.as_slice()).unwrap(), ObservationSet::empty());
    }

    #[test]
    fn malformed_files_rejected() {
        assert!(ObservationSet::read("nope\n".as_bytes()).is_err());
        let bad = format!("{FILE_HEADER}\n# noise_sd = 1.0\n# rows = 2\nt,x1,x2,y1,y2\n0.1,1,2,3,4\n");
        assert!(ObservationSet::read(bad.as_bytes()).is_err());
        let bad = format!("{FILE_HEADER}\n# noise_sd = 1.0\n# rows = 1\nt,x1,x2,y1,y2\n0.1,1,2,x,4\n");
        assert!(ObservationSet::read(bad.as_bytes()).is_err());
    }
}
