use std::fmt::Write;

use nalgebra::DMatrix;

use super::{ConstraintKind, LmiProblem, VariableKind};

fn write_matrix(out: &mut String, label: &str, m: &DMatrix<f64>) {
    let _ = write!(out, "  {label}");
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = write!(out, " {:.17e}", m[(i, j)]);
        }
    }
    out.push('\n');
}

/// Format:
///
/// ```text
/// lmi-problem 1
/// scalars <n>
/// var <name> scalar|sym <dim> offset <k>
/// constraint <name> nsd|psd dim <d>
///   const <row-major entries>
///   term <scalar> <row-major entries>
/// objective constant <c>
///   linear <scalar> <coef>
///   quadratic <scalar> <coef>
/// end
/// ```
pub fn render(p: &LmiProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "lmi-problem 1");
    let _ = writeln!(out, "scalars {}", p.num_scalars());
    for v in p.variables() {
        match v.kind {
            VariableKind::Scalar => {
                let _ = writeln!(out, "var {} scalar 1 offset {}", v.name, v.offset);
            }
            VariableKind::Symmetric(d) => {
                let _ = writeln!(out, "var {} sym {} offset {}", v.name, d, v.offset);
            }
        }
    }
    for c in p.constraints() {
        let kind = match c.kind {
            ConstraintKind::Nsd => "nsd",
            ConstraintKind::Psd => "psd",
        };
        let _ = writeln!(out, "constraint {} {} dim {}", c.name.replace(' ', "_"), kind, c.expr.dim());
        write_matrix(&mut out, "const", c.expr.constant());
        for (s, m) in c.expr.terms() {
            write_matrix(&mut out, &format!("term {s}"), m);
        }
    }
    let obj = p.objective();
    let _ = writeln!(out, "objective constant {:.17e}", obj.constant);
    for (s, c) in obj.linear.iter().enumerate().filter(|(_, c)| **c != 0.0) {
        let _ = writeln!(out, "  linear {s} {c:.17e}");
    }
    for (s, q) in obj.quadratic.iter().enumerate().filter(|(_, q)| **q != 0.0) {
        let _ = writeln!(out, "  quadratic {s} {q:.17e}");
    }
    out.push_str("end\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_lists_every_constraint() {
        let mut p = LmiProblem::new();
        let x = p.add_matrix("X", 2);
        let t = p.add_scalar("t");
        p.require_lower_bound("X lower", x, 1.0);
        p.require_scalar_le("t upper", t, 2.0);
        p.add_linear_cost(t, -1.0);
        let text = p.dump();
        assert!(text.starts_with("lmi-problem 1\nscalars 4\n"));
        assert!(text.contains("var X sym 2 offset 0"));
        assert!(text.contains("constraint X_lower psd dim 2"));
        assert!(text.contains("constraint t_upper nsd dim 1"));
        assert!(text.contains("linear 3 "));
        assert!(text.ends_with("end\n"));
    }
}
