use std::fmt::Write as _;

use super::{BranchRecord, BusKind, BusRecord, CaseError, GenRecord, NetworkCase};

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

/// Parses the numeric-matrix subset of a MATPOWER case file.
///
/// Recognized fields are `baseMVA`, `bus`, `gen`, `branch` and the optional
/// `gencost`; everything else (comments, `version`, `areas`, name cell
/// arrays, the `function` header) is skipped. Powers are divided by
/// `baseMVA` and angles converted to radians. Out-of-service generators are
/// dropped; out-of-service branches are kept with `in_service = false`.
pub fn parse_matpower(text: &str) -> Result<NetworkCase, CaseError> {
    let clean = strip_comments(text);

    let base_mva = match field_rhs(&clean, "baseMVA") {
        Some(rhs) => {
            let tok = rhs.split(';').next().unwrap_or("").trim();
            tok.parse::<f64>().map_err(|_| CaseError::MalformedRow {
                section: "baseMVA",
                row: 0,
                reason: format!("not a number: `{tok}`"),
            })?
        }
        None => return Err(CaseError::MissingSection("baseMVA")),
    };
    if !(base_mva > 0.0) {
        return Err(CaseError::InvalidRecord("baseMVA must be positive".into()));
    }

    let bus_rows = matrix(&clean, "bus", BUS_COLS)?.ok_or(CaseError::MissingSection("bus"))?;
    let gen_rows = matrix(&clean, "gen", GEN_COLS)?.ok_or(CaseError::MissingSection("gen"))?;
    let branch_rows =
        matrix(&clean, "branch", BRANCH_COLS)?.ok_or(CaseError::MissingSection("branch"))?;
    let cost_rows = matrix(&clean, "gencost", 4)?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for (row, r) in bus_rows.iter().enumerate() {
        let kind = BusKind::from_code(r[1] as i64).ok_or_else(|| CaseError::MalformedRow {
            section: "bus",
            row,
            reason: format!("unsupported bus type {}", r[1]),
        })?;
        buses.push(BusRecord {
            id: as_id(r[0], "bus", row)?,
            kind,
            p_load: r[2] / base_mva,
            q_load: r[3] / base_mva,
            gs: r[4] / base_mva,
            bs: r[5] / base_mva,
            v_init: r[7],
            theta_init: r[8].to_radians(),
            v_min: r[12],
            v_max: r[11],
        });
    }

    let costs = match &cost_rows {
        Some(rows) => {
            if rows.len() < gen_rows.len() {
                return Err(CaseError::MalformedRow {
                    section: "gencost",
                    row: rows.len(),
                    reason: format!("{} cost rows for {} generators", rows.len(), gen_rows.len()),
                });
            }
            rows.iter()
                .enumerate()
                .map(|(row, r)| polynomial_cost(r, row, base_mva))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => vec![Vec::new(); gen_rows.len()],
    };

    let mut gens = Vec::with_capacity(gen_rows.len());
    for (row, r) in gen_rows.iter().enumerate() {
        if r[7] <= 0.0 {
            continue;
        }
        gens.push(GenRecord {
            bus: as_id(r[0], "gen", row)?,
            p_set: r[1] / base_mva,
            v_set: r[5],
            p_min: r[9] / base_mva,
            p_max: r[8] / base_mva,
            q_min: r[4] / base_mva,
            q_max: r[3] / base_mva,
            cost: costs[row].clone(),
        });
    }

    let mut branches = Vec::with_capacity(branch_rows.len());
    for (row, r) in branch_rows.iter().enumerate() {
        branches.push(BranchRecord {
            from_bus: as_id(r[0], "branch", row)?,
            to_bus: as_id(r[1], "branch", row)?,
            r: r[2],
            x: r[3],
            b_chg: r[4],
            tap: if r[8] == 0.0 { 1.0 } else { r[8] },
            shift: r[9].to_radians(),
            in_service: r[10] != 0.0,
        });
    }

    let case = NetworkCase {
        base_mva,
        buses,
        branches,
        gens,
    };
    case.validate()?;
    Ok(case)
}

/// Writes a case back out as MATPOWER text that [`parse_matpower`] accepts.
pub fn to_matpower(case: &NetworkCase) -> String {
    let base = case.base_mva;
    let mut out = String::new();
    out.push_str("function mpc = exported\nmpc.version = '2';\n");
    let _ = writeln!(out, "mpc.baseMVA = {:?};", base);

    out.push_str("mpc.bus = [\n");
    for b in &case.buses {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t{:?}\t0\t1\t{:?}\t{:?};",
            b.id,
            b.kind.code(),
            b.p_load * base,
            b.q_load * base,
            b.gs * base,
            b.bs * base,
            b.v_init,
            b.theta_init.to_degrees(),
            b.v_max,
            b.v_min
        );
    }
    out.push_str("];\n");

    out.push_str("mpc.gen = [\n");
    for g in &case.gens {
        let _ = writeln!(
            out,
            "\t{}\t{:?}\t0\t{:?}\t{:?}\t{:?}\t{:?}\t1\t{:?}\t{:?};",
            g.bus,
            g.p_set * base,
            g.q_max * base,
            g.q_min * base,
            g.v_set,
            base,
            g.p_max * base,
            g.p_min * base
        );
    }
    out.push_str("];\n");

    out.push_str("mpc.branch = [\n");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "\t{}\t{}\t{:?}\t{:?}\t{:?}\t0\t0\t0\t{:?}\t{:?}\t{};",
            br.from_bus,
            br.to_bus,
            br.r,
            br.x,
            br.b_chg,
            if br.tap == 1.0 { 0.0 } else { br.tap },
            br.shift.to_degrees(),
            u8::from(br.in_service)
        );
    }
    out.push_str("];\n");

    if case.gens.iter().any(|g| !g.cost.is_empty()) {
        out.push_str("mpc.gencost = [\n");
        for g in &case.gens {
            // descending MATPOWER order, scaled back to MW
            let coeffs: Vec<String> = g
                .cost
                .iter()
                .enumerate()
                .rev()
                .map(|(k, c)| format!("{:?}", c / base.powi(k as i32)))
                .collect();
            let _ = writeln!(out, "\t2\t0\t0\t{}\t{};", g.cost.len(), coeffs.join("\t"));
        }
        out.push_str("];\n");
    }
    out
}

fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| match l.find('%') {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Text following `.<name> =` (or a bare `<name> =`), if the field is
/// assigned anywhere.
fn field_rhs<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(off) = text[from..].find(name) {
        let start = from + off;
        let end = start + name.len();
        from = end;
        let before_ok = start == 0 || {
            let c = bytes[start - 1];
            c == b'.' || c.is_ascii_whitespace() || c == b';'
        };
        if !before_ok {
            continue;
        }
        let rest = &text[end..];
        let trimmed = rest.trim_start();
        if let Some(rhs) = trimmed.strip_prefix('=') {
            return Some(rhs);
        }
    }
    None
}

fn matrix(
    text: &str,
    name: &'static str,
    min_cols: usize,
) -> Result<Option<Vec<Vec<f64>>>, CaseError> {
    let Some(rhs) = field_rhs(text, name) else {
        return Ok(None);
    };
    let rhs = rhs.trim_start();
    let Some(body) = rhs.strip_prefix('[') else {
        return Err(CaseError::MalformedRow {
            section: name,
            row: 0,
            reason: "expected `[`".into(),
        });
    };
    let Some(close) = body.find(']') else {
        return Err(CaseError::MalformedRow {
            section: name,
            row: 0,
            reason: "unterminated matrix".into(),
        });
    };
    let mut rows = Vec::new();
    for chunk in body[..close].split(|c| c == ';' || c == '\n') {
        let toks: Vec<&str> = chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if toks.is_empty() {
            continue;
        }
        let row = rows.len();
        let vals = toks
            .iter()
            .map(|t| parse_number(t))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CaseError::MalformedRow {
                section: name,
                row,
                reason: format!("non-numeric entry in `{}`", chunk.trim()),
            })?;
        if vals.len() < min_cols {
            return Err(CaseError::MalformedRow {
                section: name,
                row,
                reason: format!("{} columns, need at least {min_cols}", vals.len()),
            });
        }
        rows.push(vals);
    }
    // gencost rows legitimately differ in length when NCOST differs
    if name != "gencost" {
        if let Some(first) = rows.first().map(Vec::len) {
            if let Some(row) = rows.iter().position(|r| r.len() != first) {
                return Err(CaseError::MalformedRow {
                    section: name,
                    row,
                    reason: format!("{} columns, previous rows have {first}", rows[row].len()),
                });
            }
        }
    }
    Ok(Some(rows))
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok {
        "Inf" | "inf" => Some(f64::INFINITY),
        "-Inf" | "-inf" => Some(f64::NEG_INFINITY),
        _ => tok.parse().ok(),
    }
}

fn as_id(v: f64, section: &'static str, row: usize) -> Result<u32, CaseError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(CaseError::MalformedRow {
            section,
            row,
            reason: format!("bad bus id {v}"),
        })
    }
}

/// MATPOWER polynomial cost row (model 2), returned ascending in per-unit
/// power.
fn polynomial_cost(r: &[f64], row: usize, base: f64) -> Result<Vec<f64>, CaseError> {
    let bad = |reason: String| CaseError::MalformedRow {
        section: "gencost",
        row,
        reason,
    };
    if r[0] != 2.0 {
        return Err(bad(format!("cost model {} unsupported", r[0])));
    }
    let n = r[3] as usize;
    if r.len() < 4 + n {
        return Err(bad(format!(
            "NCOST = {n} but only {} coefficients",
            r.len() - 4
        )));
    }
    let descending = &r[4..4 + n];
    let mut asc: Vec<f64> = descending.iter().rev().copied().collect();
    while asc.len() > 3 {
        if asc.last() == Some(&0.0) {
            asc.pop();
        } else {
            return Err(bad("cost degree above 2".into()));
        }
    }
    for (k, c) in asc.iter_mut().enumerate() {
        *c *= base.powi(k as i32);
    }
    Ok(asc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "
function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 12.66 1 1.1 0.9;
  2 1 20 5 0 0 1 1 0 12.66 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0 0.1 0 0 0 0 0 0 1;
];
";

    #[test]
    fn parses_minimal_two_bus() {
        let case = parse_matpower(TWO_BUS).unwrap();
        assert_eq!(case.buses.len(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.gens.len(), 1);
        assert_eq!(case.buses[1].kind, BusKind::Pq);
        assert!((case.buses[1].p_load - 0.2).abs() < 1e-15);
        assert!((case.gens[0].p_max - 2.0).abs() < 1e-15);
        assert_eq!(case.branches[0].tap, 1.0);
    }

    #[test]
    fn dangling_branch_endpoint() {
        let text = TWO_BUS.replace("1 2 0 0.1 0", "1 3 0 0.1 0");
        assert_eq!(
            parse_matpower(&text),
            Err(CaseError::DanglingReference {
                section: "branch",
                row: 0,
                bus: 3
            })
        );
    }

    #[test]
    fn missing_sections() {
        let no_gen = TWO_BUS.replace("mpc.gen", "mpc.other");
        assert_eq!(
            parse_matpower(&no_gen),
            Err(CaseError::MissingSection("gen"))
        );
        let no_branch = TWO_BUS.replace("mpc.branch", "mpc.lines");
        assert_eq!(
            parse_matpower(&no_branch),
            Err(CaseError::MissingSection("branch"))
        );
    }

    #[test]
    fn short_row_is_malformed() {
        let text = TWO_BUS.replace("2 1 20 5 0 0 1 1 0 12.66 1 1.1 0.9;", "2 1 20 5 0 0 1;");
        assert!(matches!(
            parse_matpower(&text),
            Err(CaseError::MalformedRow {
                section: "bus",
                row: 1,
                ..
            })
        ));
    }

    #[test]
    fn reference_count_checked() {
        let two_refs = TWO_BUS.replace("2 1 20 5", "2 3 20 5");
        assert_eq!(parse_matpower(&two_refs), Err(CaseError::NoReference(2)));
        let no_ref = TWO_BUS.replace("1 3 0 0 0", "1 2 0 0 0");
        assert_eq!(parse_matpower(&no_ref), Err(CaseError::NoReference(0)));
    }

    #[test]
    fn comments_and_unknown_fields_ignored() {
        let text = format!(
            "% header comment\n{}\nmpc.areas = [1 1];\nmpc.bus_name = {{'a'; 'b'}};\n",
            TWO_BUS.replace("mpc.baseMVA = 100;", "mpc.baseMVA = 100; % MVA base")
        );
        let case = parse_matpower(&text).unwrap();
        assert_eq!(case.buses.len(), 2);
    }

    #[test]
    fn gencost_scaled_to_per_unit() {
        let text = format!("{TWO_BUS}\nmpc.gencost = [\n  2 0 0 3 0.11 5 150;\n];\n");
        let case = parse_matpower(&text).unwrap();
        let c = &case.gens[0].cost;
        assert!((c[0] - 150.0).abs() < 1e-12);
        assert!((c[1] - 500.0).abs() < 1e-12);
        assert!((c[2] - 1100.0).abs() < 1e-9);
        // 50 MW costs the same either way
        assert!((case.gens[0].cost_at(0.5) - (0.11 * 2500.0 + 250.0 + 150.0)).abs() < 1e-9);
    }

    #[test]
    fn matpower_writer_reparses() {
        let case = parse_matpower(TWO_BUS).unwrap();
        let again = parse_matpower(&to_matpower(&case)).unwrap();
        assert_eq!(again.buses.len(), 2);
        assert!((again.buses[1].q_load - case.buses[1].q_load).abs() < 1e-15);
        assert_eq!(again.branches, case.branches);
    }
}
