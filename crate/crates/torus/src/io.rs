//! File formats. Mode numbers in files are 1-based. CSV numbers are written
//! with 17 significant digits; JSON numbers use the shortest representation
//! that parses back to the same binary64 value.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, ModelError};
use crate::hamiltonian::{ModelSpec, Monomial, Polynomial};
use crate::lattice::{FourierVector, LatticeBox, MultiIndex};
use crate::solver::{ConditionRecord, ConvergenceRecord, FrequencyRecord, SolverOutcome, Status, WorstPair};
use crate::vectorfield::BVariant;
use crate::VERSION;

/// Provenance block carried by every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub config: serde_json::Value,
}

impl Header {
    pub fn new<C: Serialize>(config: &C) -> Result<Self, FormatError> {
        Ok(Header { tool: "torus".into(), version: VERSION.into(), config: serde_json::to_value(config)? })
    }

    /// `#`-prefixed lines placed above a CSV table.
    pub fn write_comment<W: Write>(&self, w: &mut W) -> Result<(), FormatError> {
        writeln!(w, "# {} {}", self.tool, self.version)?;
        writeln!(w, "# config: {}", serde_json::to_string(&self.config)?)?;
        Ok(())
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip binary64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64, FormatError> {
    s.trim().parse().map_err(|e| FormatError::Parse { line, msg: format!("{s:?}: {e}") })
}

fn parse_int<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, FormatError>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse().map_err(|e| FormatError::Parse { line, msg: format!("{s:?}: {e}") })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r)
}

/// One coefficient `ẑ_mode(k)`; `mode` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub mode: usize,
    pub k: Vec<i64>,
    pub value: f64,
}

/// Every entry of `v`, zeros included, mode-major.
pub fn coefficient_rows(v: &FourierVector) -> Vec<CoefficientRow> {
    let points = v.support.points();
    let mut out = Vec::with_capacity(v.values.len());
    for j in 0..v.n {
        for (p, k) in points.iter().enumerate() {
            out.push(CoefficientRow { mode: j + 1, k: k.0.clone(), value: v.values[j * points.len() + p] });
        }
    }
    out
}

/// Inverse of [`coefficient_rows`]. The support is the smallest box holding
/// every row; missing entries are zero, repeated entries are rejected.
pub fn from_coefficient_rows(rows: &[CoefficientRow]) -> Result<FourierVector, FormatError> {
    let bad = |line: usize, msg: String| FormatError::Parse { line, msg };
    let first = rows.first().ok_or_else(|| bad(0, "empty coefficient table".into()))?;
    let m = first.k.len();
    if m == 0 {
        return Err(bad(1, "no lattice coordinates".into()));
    }
    let mut lo = vec![i64::MAX; m];
    let mut hi = vec![i64::MIN; m];
    let mut n = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.k.len() != m {
            return Err(bad(i + 1, format!("expected {m} coordinates, got {}", r.k.len())));
        }
        if r.mode == 0 {
            return Err(bad(i + 1, "modes are numbered from 1".into()));
        }
        n = n.max(r.mode);
        for d in 0..m {
            lo[d] = lo[d].min(r.k[d]);
            hi[d] = hi[d].max(r.k[d]);
        }
    }
    let radius = (0..m).map(|d| hi[d] - lo[d]).max().unwrap_or(0);
    let (radius, center) = if (0..m).all(|d| hi[d] == -lo[d]) {
        (hi.iter().copied().max().unwrap_or(0), vec![0; m])
    } else {
        let r = (radius + 1) / 2;
        (r, (0..m).map(|d| lo[d] + r).collect())
    };
    let support = LatticeBox::new(MultiIndex(center), radius as usize);
    let mut v = FourierVector::zeros(n, support);
    let mut seen = vec![false; v.values.len()];
    for (i, r) in rows.iter().enumerate() {
        let p = v.support.position(&r.k).ok_or_else(|| bad(i + 1, "index outside the inferred box".into()))?;
        let idx = (r.mode - 1) * v.box_len() + p;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(bad(i + 1, format!("duplicate entry for mode {} at {:?}", r.mode, r.k)));
        }
        v.values[idx] = r.value;
    }
    Ok(v)
}

/// Columns `mode, k1..km, value`.
pub fn write_coefficients_csv<W: Write>(mut w: W, v: &FourierVector, header: Option<&Header>) -> Result<(), FormatError> {
    if let Some(h) = header {
        h.write_comment(&mut w)?;
    }
    let mut out = csv_writer(w);
    let mut names = vec!["mode".to_string()];
    names.extend((1..=v.m()).map(|d| format!("k{d}")));
    names.push("value".into());
    out.write_record(&names)?;
    for r in coefficient_rows(v) {
        let mut rec = vec![r.mode.to_string()];
        rec.extend(r.k.iter().map(|x| x.to_string()));
        rec.push(fmt_f64(r.value));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_coefficients_csv<R: Read>(r: R) -> Result<FourierVector, FormatError> {
    let mut rd = csv_reader(r);
    let names = rd.headers()?.clone();
    let width = names.len();
    if width < 3 || &names[0] != "mode" || &names[width - 1] != "value" {
        return Err(FormatError::Parse { line: 1, msg: "expected columns mode, k1..km, value".into() });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let k = (1..width - 1).map(|c| parse_int(&rec[c], line)).collect::<Result<_, _>>()?;
        rows.push(CoefficientRow { mode: parse_int(&rec[0], line)?, k, value: parse_f64(&rec[width - 1], line)? });
    }
    from_coefficient_rows(&rows)
}

/// Model definition file. `excited` lists 1-based mode numbers in increasing
/// order; `amplitudes` follows the same order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub excited: Vec<usize>,
    pub omega: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub epsilon: f64,
    pub monomials: Vec<Monomial>,
}

impl From<&ModelSpec> for ModelFile {
    fn from(model: &ModelSpec) -> Self {
        ModelFile {
            name: model.name.clone(),
            n: model.n,
            m: model.m(),
            excited: model.excited_modes().iter().map(|j| j + 1).collect(),
            omega: model.omega.clone(),
            amplitudes: model.amplitudes.clone(),
            epsilon: model.epsilon,
            monomials: model.h1.monomials.clone(),
        }
    }
}

impl ModelFile {
    pub fn to_model(&self) -> Result<ModelSpec, ModelError> {
        let bad = |msg: String| Err(ModelError::Invalid(msg));
        if self.excited.len() != self.m {
            return bad(format!("m = {} but {} excited modes listed", self.m, self.excited.len()));
        }
        if self.excited.windows(2).any(|w| w[0] >= w[1]) {
            return bad("excited modes must be strictly increasing".into());
        }
        if let Some(j) = self.excited.iter().find(|&&j| j == 0 || j > self.n) {
            return bad(format!("excited mode {j} outside 1..={}", self.n));
        }
        if let Some(t) = self.monomials.iter().find(|t| t.p.len() != self.n || t.q.len() != self.n) {
            return bad(format!("monomial exponents must have length {}, got {}/{}", self.n, t.p.len(), t.q.len()));
        }
        let mut excited = vec![false; self.n];
        for &j in &self.excited {
            excited[j - 1] = true;
        }
        let model = ModelSpec {
            name: if self.name.is_empty() { "custom".into() } else { self.name.clone() },
            n: self.n,
            excited,
            omega: self.omega.clone(),
            amplitudes: self.amplitudes.clone(),
            epsilon: self.epsilon,
            h1: Polynomial::from_monomials(self.n, self.monomials.iter().cloned()),
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelSpec, FormatError> {
    Ok(read_json::<ModelFile>(path)?.to_model()?)
}

/// A solved torus: frequency, coefficients (pins included) and run summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub header: Header,
    pub model: ModelFile,
    pub status: Status,
    pub omega_star: Vec<f64>,
    pub initial_norm_f: f64,
    pub final_norm_f: f64,
    pub iterations: usize,
    pub schedule: Vec<usize>,
    pub b_variant: BVariant,
    pub frequencies: Vec<FrequencyRecord>,
    pub coefficients: Vec<CoefficientRow>,
}

impl SolutionFile {
    pub fn new(header: Header, model: &ModelSpec, outcome: &SolverOutcome) -> Self {
        SolutionFile {
            header,
            model: model.into(),
            status: outcome.status,
            omega_star: outcome.omega_star.clone(),
            initial_norm_f: outcome.initial_norm_f,
            final_norm_f: outcome.final_norm_f(),
            iterations: outcome.history.len(),
            schedule: outcome.schedule.clone(),
            b_variant: outcome.b_variant,
            frequencies: outcome.frequencies.clone(),
            coefficients: coefficient_rows(&outcome.zhat_star),
        }
    }

    pub fn model(&self) -> Result<ModelSpec, ModelError> {
        self.model.to_model()
    }

    pub fn zhat(&self) -> Result<FourierVector, FormatError> {
        from_coefficient_rows(&self.coefficients)
    }
}

const CONVERGENCE_COLUMNS: [&str; 10] = [
    "r",
    "radius",
    "norm_f",
    "step_norm",
    "freq_step",
    "state_step_at_t",
    "gevrey_s",
    "inverse_norm",
    "pivot_ratio",
    "dim",
];

/// Per-step table; wall-clock times are left out so reruns are byte-identical.
pub fn write_convergence_csv<W: Write>(mut w: W, history: &[ConvergenceRecord], header: &Header) -> Result<(), FormatError> {
    header.write_comment(&mut w)?;
    let mut out = csv_writer(w);
    out.write_record(CONVERGENCE_COLUMNS)?;
    for h in history {
        out.write_record([
            h.r.to_string(),
            h.radius.to_string(),
            fmt_f64(h.norm_f),
            fmt_f64(h.step_norm),
            fmt_f64(h.freq_step),
            fmt_f64(h.state_step_at_t),
            fmt_f64(h.gevrey_s),
            fmt_f64(h.inverse_norm),
            fmt_f64(h.pivot_ratio),
            h.dim.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Rows of a convergence table as `(column → value)` records.
pub fn read_convergence_csv<R: Read>(r: R) -> Result<Vec<Vec<f64>>, FormatError> {
    let mut rd = csv_reader(r);
    let names = rd.headers()?.clone();
    if names.iter().ne(CONVERGENCE_COLUMNS) {
        return Err(FormatError::Parse { line: 1, msg: "unexpected convergence columns".into() });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push(rec.iter().map(|f| parse_f64(f, line)).collect::<Result<_, _>>()?);
    }
    Ok(rows)
}

fn pair_fields(w: Option<&WorstPair>) -> [String; 5] {
    match w {
        Some(w) => [w.row.to_string(), w.col.to_string(), w.distance.to_string(), fmt_f64(w.entry), fmt_f64(w.bound)],
        None => Default::default(),
    }
}

pub fn write_conditions_csv<W: Write>(mut w: W, conditions: &[ConditionRecord], header: &Header) -> Result<(), FormatError> {
    header.write_comment(&mut w)?;
    let mut out = csv_writer(w);
    let mut names: Vec<String> = [
        "r",
        "radius",
        "s",
        "inverse_norm",
        "log_inverse_bound",
        "inverse_norm_ok",
        "localization_ok",
        "pairs_checked",
        "localization_reflected_ok",
    ]
    .map(String::from)
    .to_vec();
    for prefix in ["worst", "worst_reflected"] {
        names.extend(["row", "col", "distance", "entry", "bound"].map(|c| format!("{prefix}_{c}")));
    }
    out.write_record(&names)?;
    for c in conditions {
        let mut rec = vec![
            c.r.to_string(),
            c.radius.to_string(),
            fmt_f64(c.s),
            fmt_f64(c.inverse_norm),
            fmt_f64(c.log_inverse_bound),
            c.inverse_norm_ok.to_string(),
            c.localization_ok.to_string(),
            c.pairs_checked.to_string(),
            c.localization_reflected_ok.to_string(),
        ];
        rec.extend(pair_fields(c.worst_pair.as_ref()));
        rec.extend(pair_fields(c.worst_pair_reflected.as_ref()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{fpu_beta, henon_heiles};

    fn sample() -> FourierVector {
        let mut v = FourierVector::zeros(2, LatticeBox::centered(2, 2));
        v.set(0, &[1, -2], 0.1 + 0.2);
        v.set(1, &[0, 0], -1.0 / 3.0);
        v.set(1, &[2, 2], 5e-300);
        v.set(0, &[-2, 1], f64::MIN_POSITIVE);
        v
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let v = sample();
        let mut buf = Vec::new();
        let header = Header::new(&serde_json::json!({"seed": 1})).unwrap();
        write_coefficients_csv(&mut buf, &v, Some(&header)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# torus "));
        assert!(text.contains("\nmode,k1,k2,value\n"));
        let back = read_coefficients_csv(&buf[..]).unwrap();
        assert_eq!(back.support, v.support);
        assert_eq!(back.values, v.values);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let v = sample();
        let rows = coefficient_rows(&v);
        let text = serde_json::to_string(&rows).unwrap();
        let back: Vec<CoefficientRow> = serde_json::from_str(&text).unwrap();
        let w = from_coefficient_rows(&back).unwrap();
        assert_eq!(w.values, v.values);
    }

    #[test]
    fn rows_are_one_based() {
        let rows = coefficient_rows(&sample());
        assert_eq!(rows[0].mode, 1);
        assert_eq!(rows.last().unwrap().mode, 2);
        assert_eq!(rows.len(), 2 * 25);
    }

    #[test]
    fn table_errors_carry_line_numbers() {
        let text = "mode,k1,value\n1,0,1.0\n1,x,2.0\n";
        match read_coefficients_csv(text.as_bytes()) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = "mode,k1,value\n1,0,1.0\n1,0,2.0\n";
        assert!(read_coefficients_csv(dup.as_bytes()).is_err());
        let zero = "mode,k1,value\n0,0,1.0\n";
        assert!(read_coefficients_csv(zero.as_bytes()).is_err());
    }

    #[test]
    fn off_centre_support_is_recovered() {
        let mut v = FourierVector::zeros(1, LatticeBox::new(MultiIndex(vec![5]), 2));
        v.set(0, &[3], 1.0);
        v.set(0, &[7], 2.0);
        let w = from_coefficient_rows(&coefficient_rows(&v)).unwrap();
        assert_eq!(w.support, v.support);
        assert_eq!(w.values, v.values);
    }

    #[test]
    fn model_files_round_trip() {
        for model in [henon_heiles(), fpu_beta(3, 0.1).unwrap().with_excitation(&[1.0, 0.0, 0.5]).unwrap()] {
            let file = ModelFile::from(&model);
            let text = serde_json::to_string(&file).unwrap();
            let back: ModelFile = serde_json::from_str(&text).unwrap();
            assert_eq!(back.to_model().unwrap(), model);
        }
    }

    #[test]
    fn bad_model_files_are_rejected() {
        let mut file = ModelFile::from(&henon_heiles());
        file.excited = vec![3];
        assert!(file.to_model().is_err());
        let mut file = ModelFile::from(&henon_heiles());
        file.m = 2;
        assert!(file.to_model().is_err());
        let mut file = ModelFile::from(&henon_heiles());
        file.monomials[0].p = vec![1];
        assert!(file.to_model().is_err());
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
