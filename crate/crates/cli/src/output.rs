//! Report rendering. JSON is the stable format; `table` and `csv` are lossy views.

use clap::ValueEnum;
use negcorr_core::verification::VerifyReport;
use serde_json::Value;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

/// Ordered key/value summary.
#[derive(Default)]
pub struct Summary {
    rows: Vec<(String, Value)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&mut self, key: &str, v: &str) {
        self.rows.push((key.into(), Value::from(v)));
    }

    pub fn num(&mut self, key: &str, v: f64) {
        self.rows
            .push((key.into(), serde_json::to_value(v).unwrap_or(Value::Null)));
    }

    pub fn opt(&mut self, key: &str, v: Option<f64>) {
        match v {
            Some(x) => self.num(key, x),
            None => self.rows.push((key.into(), Value::Null)),
        }
    }

    pub fn int(&mut self, key: &str, v: u64) {
        self.rows.push((key.into(), Value::from(v)));
    }

    pub fn flag(&mut self, key: &str, v: bool) {
        self.rows.push((key.into(), Value::from(v)));
    }

    pub fn list(&mut self, key: &str, v: &[usize]) {
        self.rows.push((key.into(), Value::from(v.to_vec())));
    }

    fn plain(v: &Value, sep: &str) -> String {
        match v {
            Value::String(s) => s.clone(),
            Value::Null => "-".into(),
            Value::Array(a) => a.iter().map(|x| Self::plain(x, sep)).collect::<Vec<_>>().join(sep),
            other => other.to_string(),
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let body: Vec<String> = self
                    .rows
                    .iter()
                    .map(|(k, v)| format!("{}:{}", Value::from(k.as_str()), v))
                    .collect();
                format!("{{{}}}\n", body.join(","))
            }
            Format::Table => {
                let width = self.rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                self.rows
                    .iter()
                    .map(|(k, v)| format!("{k:<width$}  {}\n", Self::plain(v, " ")))
                    .collect()
            }
            Format::Csv => {
                let mut out = String::from("key,value\n");
                for (k, v) in &self.rows {
                    out.push_str(&format!("{k},{}\n", Self::plain(v, ";")));
                }
                out
            }
        }
    }
}

fn headline(r: &VerifyReport) -> Summary {
    let q = &r.ratio;
    let c = &r.correlations;
    let mut s = Summary::new();
    s.text("relaxation", &q.relaxation);
    s.num("relaxation_value", q.relaxation_value);
    s.flag("relaxation_converged", q.relaxation_converged);
    s.opt("brute_force_opt", q.brute_force_opt);
    s.text("algorithm", &q.algorithm.to_string());
    s.int("trials", q.trials);
    s.int("seed", q.seed);
    s.num("mean_cost", q.mean_cost.mean);
    s.num("mean_cost_std_err", q.mean_cost.std_err);
    s.num("ci95_low", q.mean_cost.ci95[0]);
    s.num("ci95_high", q.mean_cost.ci95[1]);
    s.num("expected_cost_independent", q.expected_cost_independent);
    s.num("lb_empty", q.lower_bounds.empty);
    s.num("lb_full", q.lower_bounds.full);
    s.num("lb_grouped", q.lower_bounds.grouped);
    s.opt("ratio_to_relaxation", q.ratio_to_relaxation);
    s.opt("ratio_to_opt", q.ratio_to_opt);
    s.opt("ratio_to_lb_empty", q.ratio_to_lb_empty);
    s.opt("ratio_to_lb_full", q.ratio_to_lb_full);
    s.opt("ratio_to_lb_grouped", q.ratio_to_lb_grouped);
    s.num("target_ratio", q.target_ratio);
    s.opt("max_same_group_ratio", c.max_same_group_ratio);
    s.int("assignment_failures", c.assignment_failures);
    s.int("marginal_violations", c.marginal_violations as u64);
    s.int("weak_violations", c.weak_violations as u64);
    s.int("strong_violations", c.strong_violations as u64);
    s.int("prefix_violations", q.prefix_violations as u64);
    s.int("upper_bound_violations", q.upper_bound_violations as u64);
    s.int("violations", r.violations as u64);
    s
}

pub fn render_verify(r: &VerifyReport, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Csv => headline(r).render(Format::Csv),
        Format::Table => {
            let mut out = headline(r).render(Format::Table);
            if !r.ratio.prefix_margins.is_empty() {
                out.push_str("\nmachine  prefix  lhs           rhs           margin        flag\n");
                for m in &r.ratio.prefix_margins {
                    out.push_str(&format!(
                        "{:>7}  {:>6}  {:<12.6e}  {:<12.6e}  {:<12.4e}  {}\n",
                        m.machine,
                        m.prefix,
                        m.lhs,
                        m.rhs,
                        m.margin,
                        if m.violation { "VIOLATION" } else { "ok" }
                    ));
                }
            }
            let flagged: Vec<_> = r
                .correlations
                .pairs
                .iter()
                .filter(|p| p.weak_violation || p.strong_violation)
                .collect();
            if !flagged.is_empty() {
                out.push_str("\nflagged pairs (machine, jobs, y*y', joint)\n");
                for p in flagged {
                    out.push_str(&format!(
                        "{} {:?} {:.6} {:.6}\n",
                        p.machine, p.jobs, p.y_product, p.joint
                    ));
                }
            }
            out.push_str(&format!("\nnote: {}\n", r.ratio.note));
            out
        }
    }
}
