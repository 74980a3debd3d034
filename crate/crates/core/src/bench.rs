//! Tunable composite benchmark problems.
//!
//! Sixteen problems: eight base functions, each in a 20-minima variant
//! (ids 1-8, group A) and a 10-minima variant (ids 9-16, group B). A problem
//! instance is generated deterministically from `(problem_id, dim,
//! instance, master_seed)`; every global minimum is known by construction
//! and sits exactly at the bias value.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::cma::Bounds;
use crate::niche::{self, NicheError, NicheSet, DEFAULT_SIGMA_W};
use crate::seed::{mix_seed, TAG_PROBLEM};

/// Asymmetry strength of the skew transform.
pub const SKEW_BETA: f64 = 0.2;
/// Exponent of the coordinate warp that makes minima placement non-uniform.
pub const POSITION_WARP: f64 = 1.5;
/// Minimum distance between any two generated minima.
pub const MIN_SEPARATION: f64 = 0.5;
/// Weight of the quadratic exterior penalty.
pub const PENALTY_WEIGHT: f64 = 100.0;
pub const MAX_POSITION_ATTEMPTS: usize = 10_000;
pub const DEFAULT_MIN_HARDNESS: f64 = 1.0;
pub const DEFAULT_MAX_HARDNESS: f64 = 3.0;

const WEIERSTRASS_A: f64 = 0.5;
const WEIERSTRASS_B: f64 = 3.0;
const WEIERSTRASS_KMAX: usize = 20;
/// Argument scale; the function has period `1/scale` in each coordinate, so
/// the period is kept wider than the search box.
const WEIERSTRASS_SCALE: f64 = 0.05;
const SCHWEFEL_SCALE: f64 = 100.0;
const SCHWEFEL_OPT: f64 = 420.968_746_227_503_6;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown base function `{0}`")]
    UnknownFunction(String),
    #[error("problem id {0} out of range 1..=16")]
    UnknownProblem(u32),
    #[error("invalid {what}: {value}")]
    InvalidSpec { what: &'static str, value: usize },
    #[error("could not place {wanted} minima {sep} apart in {dim} dimensions after {attempts} attempts")]
    GenerationFailure {
        wanted: usize,
        dim: usize,
        sep: f64,
        attempts: usize,
    },
    #[error(transparent)]
    Niche(#[from] NicheError),
    #[error("problem file line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Base function applied around each minimum. All satisfy `g(0) = 0` and
/// `g ≥ 0`, so the composite minimum value equals the bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaseFn {
    Elliptic,
    DiffPowers,
    Schwefel12Skewed,
    Rosenbrock,
    AckleySkewed,
    Rastrigin,
    WeierstrassPen,
    Schwefel226Pen,
    /// Plain sphere, used for unimodal sanity runs.
    Sphere,
}

impl BaseFn {
    pub const SUITE: [BaseFn; 8] = [
        BaseFn::Elliptic,
        BaseFn::DiffPowers,
        BaseFn::Schwefel12Skewed,
        BaseFn::Rosenbrock,
        BaseFn::AckleySkewed,
        BaseFn::Rastrigin,
        BaseFn::WeierstrassPen,
        BaseFn::Schwefel226Pen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseFn::Elliptic => "elliptic",
            BaseFn::DiffPowers => "diff_powers",
            BaseFn::Schwefel12Skewed => "schwefel12_skewed",
            BaseFn::Rosenbrock => "rosenbrock",
            BaseFn::AckleySkewed => "ackley_skewed",
            BaseFn::Rastrigin => "rastrigin",
            BaseFn::WeierstrassPen => "weierstrass_pen",
            BaseFn::Schwefel226Pen => "schwefel226_pen",
            BaseFn::Sphere => "sphere",
        }
    }

    /// Whether the problem adds [`boundary_penalty`] on the raw point.
    pub fn penalized(self) -> bool {
        matches!(self, BaseFn::WeierstrassPen | BaseFn::Schwefel226Pen)
    }

    pub fn eval(self, z: &[f64]) -> f64 {
        match self {
            BaseFn::Sphere => z.iter().map(|v| v * v).sum(),
            BaseFn::Elliptic => z
                .iter()
                .enumerate()
                .map(|(i, v)| 1e6f64.powf(ramp(i, z.len())) * v * v)
                .sum(),
            BaseFn::DiffPowers => z
                .iter()
                .enumerate()
                .map(|(i, v)| v.abs().powf(2.0 + 4.0 * ramp(i, z.len())))
                .sum(),
            BaseFn::Schwefel12Skewed => {
                let s = skew_transform(z, SKEW_BETA);
                let mut partial = 0.0;
                s.iter()
                    .map(|v| {
                        partial += v;
                        partial * partial
                    })
                    .sum()
            }
            BaseFn::Rosenbrock => rosenbrock(z),
            BaseFn::AckleySkewed => ackley(&skew_transform(z, SKEW_BETA)),
            BaseFn::Rastrigin => z
                .iter()
                .map(|v| v * v + 10.0 * (1.0 - (2.0 * PI * v).cos()))
                .sum(),
            BaseFn::WeierstrassPen => weierstrass(z),
            BaseFn::Schwefel226Pen => schwefel226(z),
        }
    }
}

impl fmt::Display for BaseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseFn {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaseFn::SUITE
            .iter()
            .chain(std::iter::once(&BaseFn::Sphere))
            .find(|f| f.name() == s)
            .copied()
            .ok_or_else(|| BenchError::UnknownFunction(s.to_string()))
    }
}

/// Evaluates the base function named `fn_id` at `z`.
pub fn base_eval(fn_id: &str, z: &[f64]) -> Result<f64, BenchError> {
    Ok(fn_id.parse::<BaseFn>()?.eval(z))
}

/// `(i-1)/(n-1)` for 0-based `i`; zero in one dimension.
fn ramp(i: usize, n: usize) -> f64 {
    if n < 2 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

fn rosenbrock(z: &[f64]) -> f64 {
    if z.len() == 1 {
        return z[0] * z[0];
    }
    z.windows(2)
        .map(|w| {
            let a = w[0] + 1.0;
            let b = w[1] + 1.0;
            100.0 * (a * a - b).powi(2) + (a - 1.0).powi(2)
        })
        .sum()
}

fn ackley(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let sq = z.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = z.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    20.0 * (1.0 - (-0.2 * sq.sqrt()).exp()) + (E - cs.exp())
}

fn weierstrass(z: &[f64]) -> f64 {
    let mut offset = 0.0;
    let mut amp = 1.0;
    let mut freq = PI;
    for _ in 0..=WEIERSTRASS_KMAX {
        offset += amp * freq.cos();
        amp *= WEIERSTRASS_A;
        freq *= WEIERSTRASS_B;
    }
    let mut total = 0.0;
    for &v in z {
        let v = WEIERSTRASS_SCALE * v;
        let mut amp = 1.0;
        let mut freq = 2.0 * PI;
        let mut sum = 0.0;
        for _ in 0..=WEIERSTRASS_KMAX {
            sum += amp * (freq * (v + 0.5)).cos();
            amp *= WEIERSTRASS_A;
            freq *= WEIERSTRASS_B;
        }
        total += sum - offset;
    }
    total
}

/// Bounded variant of Schwefel 2.26: arguments outside ±500 are folded
/// back and penalized so the minimum at the origin stays global.
fn schwefel226(z: &[f64]) -> f64 {
    let n = z.len() as f64;
    let term = |s: f64| -> f64 {
        if s > 500.0 {
            let m = 500.0 - s % 500.0;
            m * m.abs().sqrt().sin() - (s - 500.0).powi(2) / (10_000.0 * n)
        } else if s < -500.0 {
            let m = s.abs() % 500.0 - 500.0;
            m * m.abs().sqrt().sin() - (s + 500.0).powi(2) / (10_000.0 * n)
        } else {
            s * s.abs().sqrt().sin()
        }
    };
    let peak = term(SCHWEFEL_OPT);
    z.iter()
        .map(|&v| peak - term(SCHWEFEL_SCALE * v + SCHWEFEL_OPT))
        .sum()
}

/// Coordinate-wise asymmetry: positive coordinates are raised to a power
/// that grows with the coordinate index and magnitude; the origin and
/// negative coordinates are left alone.
pub fn skew_transform(z: &[f64], beta: f64) -> Vec<f64> {
    let n = z.len();
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 {
                v.powf(1.0 + beta * ramp(i, n) * v.sqrt())
            } else {
                v
            }
        })
        .collect()
}

/// Quadratic exterior penalty; zero inside the box.
pub fn boundary_penalty(x: &[f64], bounds: &Bounds) -> f64 {
    PENALTY_WEIGHT
        * x.iter()
            .map(|&v| {
                let over = (v - bounds.upper).max(bounds.lower - v).max(0.0);
                over * over
            })
            .sum::<f64>()
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// columns of Q sign-corrected by the diagonal of R.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Draws `n_minima` warped-uniform points in `[-5, 5]^dim` that are pairwise
/// at least [`MIN_SEPARATION`] apart.
pub fn generate_positions<R: Rng + ?Sized>(
    n_minima: usize,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>, BenchError> {
    if n_minima < 2 {
        return Err(BenchError::InvalidSpec {
            what: "minima count",
            value: n_minima,
        });
    }
    let bounds = Bounds::default();
    let width = bounds.upper - bounds.lower;
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(n_minima);
    let mut attempts = 0;
    while out.len() < n_minima {
        if attempts == MAX_POSITION_ATTEMPTS {
            return Err(BenchError::GenerationFailure {
                wanted: n_minima,
                dim,
                sep: MIN_SEPARATION,
                attempts,
            });
        }
        attempts += 1;
        let p = DVector::from_fn(dim, |_, _| {
            let u: f64 = rng.random();
            width * u.powf(POSITION_WARP) + bounds.lower
        });
        if out.iter().all(|q| (q - &p).norm() >= MIN_SEPARATION) {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    A,
    B,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::A => "A",
            Group::B => "B",
        })
    }
}

/// One row of the published problem table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub problem_id: u32,
    pub name: &'static str,
    pub group: Group,
    pub n_minima: usize,
    pub f_star: f64,
}

const NAMES: [&str; 8] = [
    "High-Conditioned Elliptic",
    "Different Powers",
    "Skewed Schwefel No2",
    "Rosenbrock",
    "Skewed Ackley",
    "Rastrigin",
    "Penalized Weierstrass",
    "Penalized Schwefel N26",
];

const F_STAR: [f64; 8] = [-97.8, 64.1, 483.1, -96.7, -395.0, -34.6, 494.0, -402.2];

/// The 16 problems with their published optimum values and minima counts.
pub fn reference_table() -> Vec<ReferenceRow> {
    (1..=16).map(|id| reference_row(id).unwrap()).collect()
}

fn reference_row(problem_id: u32) -> Option<ReferenceRow> {
    if !(1..=16).contains(&problem_id) {
        return None;
    }
    let k = ((problem_id - 1) % 8) as usize;
    let group = if problem_id <= 8 { Group::A } else { Group::B };
    Some(ReferenceRow {
        problem_id,
        name: NAMES[k],
        group,
        n_minima: if group == Group::A { 20 } else { 10 },
        f_star: F_STAR[k],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub problem_id: u32,
    pub group: Group,
    pub base_fn: BaseFn,
    pub n_minima: usize,
    pub dim: usize,
    pub instance: u32,
    pub paper_f_star: f64,
}

impl ProblemSpec {
    pub fn new(problem_id: u32, dim: usize, instance: u32) -> Result<Self, BenchError> {
        let row = reference_row(problem_id).ok_or(BenchError::UnknownProblem(problem_id))?;
        if dim == 0 {
            return Err(BenchError::InvalidSpec { what: "dimension", value: dim });
        }
        if instance == 0 {
            return Err(BenchError::InvalidSpec { what: "instance", value: 0 });
        }
        Ok(Self {
            problem_id,
            group: row.group,
            base_fn: BaseFn::SUITE[((problem_id - 1) % 8) as usize],
            n_minima: row.n_minima,
            dim,
            instance,
            paper_f_star: row.f_star,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProblem {
    pub spec: ProblemSpec,
    pub niche: NicheSet,
    pub master_seed: u64,
    pub seed: u64,
    pub bias: f64,
}

impl GeneratedProblem {
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64, NicheError> {
        let mut f = self.niche.evaluate(x)?;
        if self.spec.base_fn.penalized() {
            f += boundary_penalty(x.as_slice(), &Bounds::default());
        }
        Ok(f)
    }
}

/// Seed of the problem generator for one `(problem, dim, instance)`.
pub fn problem_seed(master_seed: u64, spec: &ProblemSpec) -> u64 {
    mix_seed(&[
        TAG_PROBLEM,
        master_seed,
        spec.problem_id as u64,
        spec.dim as u64,
        spec.instance as u64,
    ])
}

/// Deterministically realizes `spec`: positions, hardness, rotations and
/// niching radius all come from a ChaCha8 stream seeded by
/// [`problem_seed`].
pub fn instantiate_problem(spec: &ProblemSpec, master_seed: u64) -> Result<GeneratedProblem, BenchError> {
    let seed = problem_seed(master_seed, spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = generate_positions(spec.n_minima, spec.dim, &mut rng)?;
    let k = positions.len();
    let hardness = (1..=k)
        .map(|i| niche::hardness(i, k, DEFAULT_MIN_HARDNESS, DEFAULT_MAX_HARDNESS))
        .collect();
    let rotations = (0..k).map(|_| random_rotation(spec.dim, &mut rng)).collect();
    let niche_radius = niche::niching_radius(&positions)?;
    let bias = spec.paper_f_star;
    Ok(GeneratedProblem {
        spec: spec.clone(),
        niche: NicheSet {
            positions,
            hardness,
            rotations,
            base_fn: vec![spec.base_fn; k],
            niche_radius,
            bias,
            sigma_w: DEFAULT_SIGMA_W,
        },
        master_seed,
        seed,
        bias,
    })
}

/// Formats `v` as a C99-style hexadecimal float (`%a`), exact for every
/// finite value.
pub fn hex_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mant == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let digits = format!("{mant:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

/// Parses the output of [`hex_float`].
pub fn parse_hex_float(s: &str) -> Option<f64> {
    match s {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let body = body.strip_prefix("0x")?;
    let (mantissa, exp) = body.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if frac.len() > 13 {
        return None;
    }
    let frac_bits = if frac.is_empty() {
        0
    } else {
        u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
    };
    let bits = match lead {
        "0" if frac_bits == 0 => 0,
        "0" if exp == -1022 => frac_bits,
        "1" if (-1022..=1023).contains(&exp) => (((exp + 1023) as u64) << 52) | frac_bits,
        _ => return None,
    };
    Some(f64::from_bits(bits | (u64::from(neg) << 63)))
}

/// Serializes a generated problem as line-oriented text. Floats are written
/// as hex floats so a reader in any language recovers them exactly.
pub fn dump_problem(p: &GeneratedProblem) -> String {
    let mut out = String::new();
    let line = |out: &mut String, s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    let row = |v: &mut dyn Iterator<Item = f64>| v.map(hex_float).collect::<Vec<_>>().join(" ");
    line(&mut out, "nichecma-problem 1".into());
    line(&mut out, format!("problem_id {}", p.spec.problem_id));
    line(&mut out, format!("group {}", p.spec.group));
    line(&mut out, format!("base_fn {}", p.spec.base_fn));
    line(&mut out, format!("dim {}", p.spec.dim));
    line(&mut out, format!("instance {}", p.spec.instance));
    line(&mut out, format!("n_minima {}", p.niche.len()));
    line(&mut out, format!("master_seed {}", p.master_seed));
    line(&mut out, format!("seed {}", p.seed));
    line(&mut out, format!("bias {}", hex_float(p.bias)));
    line(&mut out, format!("niche_radius {}", hex_float(p.niche.niche_radius)));
    line(&mut out, format!("sigma_w {}", hex_float(p.niche.sigma_w)));
    for i in 0..p.niche.len() {
        line(&mut out, format!("minimum {i}"));
        line(&mut out, format!("hardness {}", hex_float(p.niche.hardness[i])));
        line(&mut out, format!("position {}", row(&mut p.niche.positions[i].iter().copied())));
        // row-major
        let r = &p.niche.rotations[i];
        let mut it = (0..r.nrows()).flat_map(|a| (0..r.ncols()).map(move |b| r[(a, b)]));
        line(&mut out, format!("rotation {}", row(&mut it)));
    }
    out
}

/// Reads a problem written by [`dump_problem`].
pub fn load_problem(text: &str) -> Result<GeneratedProblem, BenchError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = |key: &str| -> Result<(usize, String), BenchError> {
        let (no, l) = lines.next().ok_or(BenchError::Format {
            line: 0,
            msg: format!("unexpected end of file, expected `{key}`"),
        })?;
        let (k, v) = l.split_once(' ').unwrap_or((l, ""));
        if k != key {
            return Err(BenchError::Format {
                line: no + 1,
                msg: format!("expected `{key}`, found `{k}`"),
            });
        }
        Ok((no + 1, v.trim().to_string()))
    };
    fn num<T: FromStr>(line: usize, v: &str) -> Result<T, BenchError> {
        v.parse().map_err(|_| BenchError::Format {
            line,
            msg: format!("bad number `{v}`"),
        })
    }
    fn float(line: usize, v: &str) -> Result<f64, BenchError> {
        parse_hex_float(v).ok_or_else(|| BenchError::Format {
            line,
            msg: format!("bad hex float `{v}`"),
        })
    }
    fn floats(line: usize, v: &str) -> Result<Vec<f64>, BenchError> {
        v.split_whitespace().map(|t| float(line, t)).collect()
    }

    let (l, v) = next("nichecma-problem")?;
    if v != "1" {
        return Err(BenchError::Format { line: l, msg: format!("unsupported version `{v}`") });
    }
    let (l, v) = next("problem_id")?;
    let problem_id: u32 = num(l, &v)?;
    next("group")?;
    let (l, v) = next("base_fn")?;
    let base_fn: BaseFn = v.parse().map_err(|e: BenchError| BenchError::Format { line: l, msg: e.to_string() })?;
    let (l, v) = next("dim")?;
    let dim: usize = num(l, &v)?;
    let (l, v) = next("instance")?;
    let instance: u32 = num(l, &v)?;
    let (l, v) = next("n_minima")?;
    let k: usize = num(l, &v)?;
    let (l, v) = next("master_seed")?;
    let master_seed: u64 = num(l, &v)?;
    let (l, v) = next("seed")?;
    let seed: u64 = num(l, &v)?;
    let (l, v) = next("bias")?;
    let bias = float(l, &v)?;
    let (l, v) = next("niche_radius")?;
    let niche_radius = float(l, &v)?;
    let (l, v) = next("sigma_w")?;
    let sigma_w = float(l, &v)?;

    let mut spec = ProblemSpec::new(problem_id, dim, instance)?;
    spec.base_fn = base_fn;
    spec.n_minima = k;

    let mut positions = Vec::with_capacity(k);
    let mut hardness = Vec::with_capacity(k);
    let mut rotations = Vec::with_capacity(k);
    for i in 0..k {
        let (l, v) = next("minimum")?;
        if num::<usize>(l, &v)? != i {
            return Err(BenchError::Format { line: l, msg: format!("expected minimum {i}") });
        }
        let (l, v) = next("hardness")?;
        hardness.push(float(l, &v)?);
        let (l, v) = next("position")?;
        let p = floats(l, &v)?;
        if p.len() != dim {
            return Err(BenchError::Format { line: l, msg: format!("expected {dim} coordinates") });
        }
        positions.push(DVector::from_vec(p));
        let (l, v) = next("rotation")?;
        let r = floats(l, &v)?;
        if r.len() != dim * dim {
            return Err(BenchError::Format { line: l, msg: format!("expected {} entries", dim * dim) });
        }
        rotations.push(DMatrix::from_row_slice(dim, dim, &r));
    }
    Ok(GeneratedProblem {
        spec,
        niche: NicheSet {
            positions,
            hardness,
            rotations,
            base_fn: vec![base_fn; k],
            niche_radius,
            bias,
            sigma_w,
        },
        master_seed,
        seed,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_functions_vanish_at_origin() {
        for f in BaseFn::SUITE.iter().chain([BaseFn::Sphere].iter()) {
            for n in [1, 2, 5, 10, 20] {
                assert_eq!(f.eval(&vec![0.0; n]), 0.0, "{f} n={n}");
            }
        }
    }

    #[test]
    fn base_functions_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for f in BaseFn::SUITE {
            for n in [1, 2, 5, 20] {
                for _ in 0..2000 {
                    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-15.0..15.0)).collect();
                    assert!(f.eval(&z) >= -1e-9, "{f} {z:?}");
                }
            }
        }
    }

    #[test]
    fn hand_evaluations() {
        assert!((BaseFn::Rastrigin.eval(&[0.5, 0.5]) - 40.5).abs() < 1e-12);
        assert_eq!(BaseFn::Elliptic.eval(&[1.0, 1.0]), 1.0 + 1e6);
        assert_eq!(base_eval("elliptic", &[1.0, 1.0]).unwrap(), 1.0 + 1e6);
        assert!(matches!(base_eval("nope", &[0.0]), Err(BenchError::UnknownFunction(_))));
    }

    #[test]
    fn skew_cases() {
        let z = [0.3, -2.0, 1.7, 4.0];
        assert_eq!(skew_transform(&z, 0.0), z.to_vec());
        assert_eq!(skew_transform(&[0.0; 3], 0.2), vec![0.0; 3]);
        let s = skew_transform(&z, 0.2);
        assert_eq!(s[1], -2.0);
        assert_eq!(s[0], 0.3);
        assert!(s[3] > 4.0);
    }

    #[test]
    fn penalty_cases() {
        let b = Bounds::default();
        assert_eq!(boundary_penalty(&[4.9, -5.0, 0.0], &b), 0.0);
        assert_eq!(boundary_penalty(&[6.0, 1.0], &b), 100.0);
        assert_eq!(boundary_penalty(&[7.0, -7.0], &b), 800.0);
    }

    #[test]
    fn rotations_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r1 = random_rotation(1, &mut rng);
        assert_eq!(r1[(0, 0)].abs(), 1.0);
        for _ in 0..100 {
            let q = random_rotation(20, &mut rng);
            let err = (q.transpose() * &q - DMatrix::identity(20, 20)).amax();
            assert!(err <= 1e-10);
        }
    }

    #[test]
    fn positions_are_separated_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = generate_positions(20, 2, &mut rng).unwrap();
        for (i, p) in pts.iter().enumerate() {
            assert!(p.iter().all(|v| (-5.0..=5.0).contains(v)));
            for q in &pts[i + 1..] {
                assert!((p - q).norm() >= MIN_SEPARATION);
            }
        }
        assert!(generate_positions(1, 2, &mut rng).is_err());
    }

    #[test]
    fn impossible_separation_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // at most 21 points fit 0.5 apart on a 10-long segment
        let err = generate_positions(30, 1, &mut rng).unwrap_err();
        assert!(matches!(err, BenchError::GenerationFailure { .. }));
    }

    #[test]
    fn reference_rows() {
        let t = reference_table();
        assert_eq!(t.len(), 16);
        assert_eq!(t.iter().filter(|r| r.group == Group::A).count(), 8);
        let r5 = t[4];
        assert_eq!((r5.name, r5.group, r5.n_minima, r5.f_star), ("Skewed Ackley", Group::A, 20, -395.0));
        let r16 = t[15];
        assert_eq!(
            (r16.name, r16.group, r16.n_minima, r16.f_star),
            ("Penalized Schwefel N26", Group::B, 10, -402.2)
        );
    }

    #[test]
    fn spec_mapping() {
        let p1 = ProblemSpec::new(1, 2, 1).unwrap();
        assert_eq!((p1.base_fn, p1.n_minima, p1.paper_f_star), (BaseFn::Elliptic, 20, -97.8));
        let p9 = ProblemSpec::new(9, 2, 1).unwrap();
        assert_eq!((p9.base_fn, p9.n_minima), (BaseFn::Elliptic, 10));
        assert!(ProblemSpec::new(17, 2, 1).is_err());
        assert!(ProblemSpec::new(3, 0, 1).is_err());
        assert!(ProblemSpec::new(3, 2, 0).is_err());
    }

    #[test]
    fn instantiation_is_deterministic() {
        let spec = ProblemSpec::new(7, 5, 3).unwrap();
        let a = instantiate_problem(&spec, 42).unwrap();
        let b = instantiate_problem(&spec, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(dump_problem(&a), dump_problem(&b));
        let c = instantiate_problem(&spec, 43).unwrap();
        assert_ne!(a.niche.positions, c.niche.positions);
        assert_eq!(a.bias, 494.0);
    }

    #[test]
    fn hex_float_examples() {
        assert_eq!(hex_float(1.0), "0x1p+0");
        assert_eq!(hex_float(-2.5), "-0x1.4p+1");
        assert_eq!(hex_float(0.0), "0x0p+0");
        assert_eq!(hex_float(f64::MIN_POSITIVE / 4.0), "0x0.4p-1022");
        for v in [0.1, -97.8, 1e-310, f64::MAX, -0.0, 5e-324] {
            let back = parse_hex_float(&hex_float(v)).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v}");
        }
    }

    #[test]
    fn dump_load_round_trip() {
        let spec = ProblemSpec::new(12, 3, 2).unwrap();
        let p = instantiate_problem(&spec, 7).unwrap();
        let text = dump_problem(&p);
        let back = load_problem(&text).unwrap();
        assert_eq!(back, p);
        assert!(load_problem("nichecma-problem 2\n").is_err());
        assert!(load_problem(&text.replace("rotation", "rotashun")).is_err());
    }
}
