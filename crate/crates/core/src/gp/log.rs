//! CSV log of the optimization trace.

/// One evaluated parameter vector. `ucb` is the acquisition value at which it
/// was proposed (absent for the initial parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationRow {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub s: f64,
    pub n: f64,
    pub e: f64,
    pub j: f64,
    pub ucb: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationLog {
    pub rows: Vec<OptimizationRow>,
}

impl OptimizationLog {
    pub fn push(&mut self, row: OptimizationRow) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let dim = self.rows.first().map_or(0, |r| r.theta.len());
        let mut out = String::from("iter");
        for i in 1..=dim {
            out.push_str(&format!(",theta_{i}"));
        }
        out.push_str(",S,N,E,J,ucb_value\n");
        for r in &self.rows {
            out.push_str(&r.iter.to_string());
            for t in &r.theta {
                out.push_str(&format!(",{t:.6}"));
            }
            out.push_str(&format!(",{:.6},{:.6},{:.6},{:.6},", r.s, r.n, r.e, r.j));
            if let Some(u) = r.ucb {
                out.push_str(&format!("{u:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut log = OptimizationLog::default();
        log.push(OptimizationRow {
            iter: 1,
            theta: vec![0.9, 2.0],
            s: 0.5,
            n: 0.0,
            e: 1.0,
            j: -0.5,
            ucb: None,
        });
        log.push(OptimizationRow {
            iter: 2,
            theta: vec![1.0, 3.0],
            s: 0.0,
            n: 0.0,
            e: 1.0,
            j: -1.0,
            ucb: Some(1.25),
        });
        assert_eq!(
            log.to_csv(),
            "iter,theta_1,theta_2,S,N,E,J,ucb_value\n\
             1,0.900000,2.000000,0.500000,0.000000,1.000000,-0.500000,\n\
             2,1.000000,3.000000,0.000000,0.000000,1.000000,-1.000000,1.250000\n"
        );
    }
}
