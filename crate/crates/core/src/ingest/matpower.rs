//! MATPOWER case files, restricted to plain numeric matrix assignments.
//!
//! Only `mpc.baseMVA`, `mpc.bus`, `mpc.gen` and `mpc.branch` are interpreted.
//! Other `mpc.*` assignments (version strings, `gencost`, `areas`, cell
//! arrays) are skipped without looking at their contents.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::network::{BranchSpec, BusKind, BusSpec, NetworkCase};

use super::IngestError;

const BUS_COLUMNS: usize = 13;
const GEN_COLUMNS: usize = 10;
const BRANCH_COLUMNS: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct BusRow {
    pub line: usize,
    pub bus_i: usize,
    pub bus_type: u8,
    pub pd: f64,
    pub qd: f64,
    pub vm: f64,
    /// Degrees.
    pub va: f64,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRow {
    pub line: usize,
    pub bus: usize,
    pub pg: f64,
    pub qg: f64,
    pub vg: f64,
    pub status: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub line: usize,
    pub fbus: usize,
    pub tbus: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub status: f64,
}

/// The MATPOWER tables as written, in MW / MVAr and source bus numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCaseTables {
    pub base_mva: f64,
    pub bus: Vec<BusRow>,
    pub gen: Vec<GenRow>,
    pub branch: Vec<BranchRow>,
}

type Row = (usize, Vec<f64>);

struct OpenMatrix {
    name: String,
    opened_at: usize,
    /// Contents are not interpreted (unknown table or cell array).
    skip: bool,
    closer: char,
    rows: Vec<Row>,
    current: Vec<f64>,
    current_line: usize,
}

impl OpenMatrix {
    fn end_row(&mut self) {
        if !self.current.is_empty() {
            self.rows
                .push((self.current_line, std::mem::take(&mut self.current)));
        }
    }

    fn push_token(&mut self, token: &str, line: usize) -> Result<(), IngestError> {
        if token.is_empty() || self.skip {
            return Ok(());
        }
        let value: f64 = token.parse().map_err(|_| {
            if token.starts_with("mpc.") {
                IngestError::syntax(
                    self.opened_at,
                    format!(
                        "unterminated matrix `mpc.{}` (line {line} starts `{token}` before `];`)",
                        self.name
                    ),
                )
            } else {
                IngestError::syntax(
                    line,
                    format!("non-numeric entry `{token}` in `mpc.{}`", self.name),
                )
            }
        })?;
        if self.current.is_empty() {
            self.current_line = line;
        }
        self.current.push(value);
        Ok(())
    }

    /// Consume one line segment. Returns the text following the closing
    /// bracket if the matrix ends on this line.
    fn feed<'a>(&mut self, segment: &'a str, line: usize) -> Result<Option<&'a str>, IngestError> {
        let mut start = 0;
        for (i, ch) in segment.char_indices() {
            match ch {
                c if c.is_whitespace() || c == ',' => {
                    self.push_token(&segment[start..i], line)?;
                    start = i + c.len_utf8();
                }
                ';' => {
                    self.push_token(&segment[start..i], line)?;
                    self.end_row();
                    start = i + 1;
                }
                c if c == self.closer => {
                    self.push_token(&segment[start..i], line)?;
                    self.end_row();
                    return Ok(Some(&segment[i + 1..]));
                }
                _ => {}
            }
        }
        self.push_token(&segment[start..], line)?;
        self.end_row();
        Ok(None)
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_string = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '\'' => in_string = !in_string,
            '%' if !in_string => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_assignment(text: &str, line: usize) -> Result<(&str, &str), IngestError> {
    let bad = || IngestError::syntax(line, format!("expected `mpc.<name> = ...`, found `{text}`"));
    let (lhs, rhs) = text.split_once('=').ok_or_else(bad)?;
    let name = lhs.trim().strip_prefix("mpc.").ok_or_else(bad)?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(bad());
    }
    Ok((name, rhs.trim()))
}

fn check_closed_tail(tail: &str, line: usize) -> Result<(), IngestError> {
    let tail = tail.trim();
    if tail.is_empty() || tail == ";" {
        Ok(())
    } else {
        Err(IngestError::syntax(
            line,
            format!("unexpected `{tail}` after closing bracket"),
        ))
    }
}

/// Parse the text of a MATPOWER case file into its raw tables.
pub fn parse_matpower_case(text: &str) -> Result<RawCaseTables, IngestError> {
    let mut base_mva = None;
    let mut tables: [(&'static str, Option<Vec<Row>>); 3] =
        [("bus", None), ("gen", None), ("branch", None)];
    let mut open: Option<OpenMatrix> = None;

    let mut finish = |m: OpenMatrix| {
        if let Some(slot) = tables.iter_mut().find(|(n, _)| *n == m.name) {
            slot.1 = Some(m.rows);
        }
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = strip_comment(raw);
        if let Some(m) = open.as_mut() {
            if let Some(tail) = m.feed(code, line)? {
                check_closed_tail(tail, line)?;
                finish(open.take().unwrap());
            }
            continue;
        }
        let trimmed = code.trim();
        if trimmed.is_empty() || trimmed.starts_with("function") {
            continue;
        }
        let (name, rhs) = parse_assignment(trimmed, line)?;
        if let Some(first) = rhs.chars().next().filter(|c| *c == '[' || *c == '{') {
            let mut m = OpenMatrix {
                name: name.to_string(),
                opened_at: line,
                skip: first == '{' || !matches!(name, "bus" | "gen" | "branch"),
                closer: if first == '[' { ']' } else { '}' },
                rows: Vec::new(),
                current: Vec::new(),
                current_line: line,
            };
            match m.feed(&rhs[1..], line)? {
                Some(tail) => {
                    check_closed_tail(tail, line)?;
                    finish(m);
                }
                None => open = Some(m),
            }
        } else if name == "baseMVA" {
            let value = rhs.trim_end_matches(';').trim();
            let parsed = value.parse::<f64>().map_err(|_| {
                IngestError::syntax(line, format!("non-numeric baseMVA `{value}`"))
            })?;
            base_mva = Some(parsed);
        }
    }
    if let Some(m) = open {
        return Err(IngestError::syntax(
            m.opened_at,
            format!("unterminated matrix `mpc.{}`", m.name),
        ));
    }

    let [bus, gen, branch] = tables;
    let base_mva = base_mva.ok_or(IngestError::Missing("baseMVA"))?;
    let bus = checked_rows(bus, BUS_COLUMNS)?;
    let gen = checked_rows(gen, GEN_COLUMNS)?;
    let branch = checked_rows(branch, BRANCH_COLUMNS)?;

    Ok(RawCaseTables {
        base_mva,
        bus: bus
            .into_iter()
            .map(|(line, r)| {
                let bus_type = r[1];
                if ![1.0, 2.0, 3.0, 4.0].contains(&bus_type) {
                    return Err(IngestError::syntax(
                        line,
                        format!("bus type code {bus_type} is not one of 1, 2, 3, 4"),
                    ));
                }
                Ok(BusRow {
                    line,
                    bus_i: bus_number(r[0], line)?,
                    bus_type: bus_type as u8,
                    pd: r[2],
                    qd: r[3],
                    vm: r[7],
                    va: r[8],
                    base_kv: r[9],
                })
            })
            .collect::<Result<_, _>>()?,
        gen: gen
            .into_iter()
            .map(|(line, r)| {
                Ok(GenRow {
                    line,
                    bus: bus_number(r[0], line)?,
                    pg: r[1],
                    qg: r[2],
                    vg: r[5],
                    status: r[7],
                })
            })
            .collect::<Result<_, IngestError>>()?,
        branch: branch
            .into_iter()
            .map(|(line, r)| {
                Ok(BranchRow {
                    line,
                    fbus: bus_number(r[0], line)?,
                    tbus: bus_number(r[1], line)?,
                    r: r[2],
                    x: r[3],
                    b: r[4],
                    status: r[10],
                })
            })
            .collect::<Result<_, IngestError>>()?,
    })
}

fn bus_number(value: f64, line: usize) -> Result<usize, IngestError> {
    if value >= 1.0 && value.fract() == 0.0 && value < u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(IngestError::syntax(
            line,
            format!("`{value}` is not a valid bus number"),
        ))
    }
}

fn checked_rows(
    (name, rows): (&'static str, Option<Vec<Row>>),
    min_columns: usize,
) -> Result<Vec<Row>, IngestError> {
    let rows = rows.ok_or(IngestError::Missing(name))?;
    let Some(width) = rows.first().map(|(_, r)| r.len()) else {
        return Ok(rows);
    };
    for (line, row) in &rows {
        if row.len() != width {
            return Err(IngestError::syntax(
                *line,
                format!(
                    "ragged row in `mpc.{name}`: expected {width} columns, found {}",
                    row.len()
                ),
            ));
        }
        if row.len() < min_columns {
            return Err(IngestError::syntax(
                *line,
                format!(
                    "`mpc.{name}` rows need at least {min_columns} columns, found {}",
                    row.len()
                ),
            ));
        }
    }
    Ok(rows)
}

/// Convert raw tables into a per-unit [`NetworkCase`].
///
/// Follows MATPOWER conventions: generator Vg sets the held voltage, a PQ bus
/// carrying an in-service generator becomes PV, and a PV bus without one
/// becomes PQ. Out-of-service branches are dropped and the remaining branches
/// are renumbered in file order.
pub fn to_network_case(tables: &RawCaseTables) -> Result<NetworkCase, IngestError> {
    let base = tables.base_mva;
    let m = tables.bus.len();

    let mut ordered: Vec<&BusRow> = tables.bus.iter().collect();
    ordered.sort_by_key(|r| r.bus_i);
    for (pos, row) in ordered.iter().enumerate() {
        if row.bus_i != pos + 1 {
            return Err(IngestError::BusNumbering {
                line: row.line,
                bus: row.bus_i,
            });
        }
        if row.bus_type == 4 {
            return Err(IngestError::IsolatedBus { bus: row.bus_i });
        }
    }

    let mut p_gen = vec![0.0; m];
    let mut held = vec![None; m];
    for gen in tables.gen.iter().filter(|g| g.status > 0.0) {
        if gen.bus > m {
            return Err(IngestError::UnknownGenBus {
                line: gen.line,
                bus: gen.bus,
            });
        }
        p_gen[gen.bus - 1] += gen.pg / base;
        held[gen.bus - 1].get_or_insert(gen.vg);
    }

    let buses = ordered
        .iter()
        .map(|row| {
            let i = row.bus_i - 1;
            let kind = match (row.bus_type, held[i].is_some()) {
                (3, _) => BusKind::Slack,
                (_, true) => BusKind::PV,
                (_, false) => BusKind::PQ,
            };
            BusSpec {
                id: row.bus_i,
                kind,
                p_load: row.pd / base,
                q_load: row.qd / base,
                p_gen: p_gen[i],
                v_setpoint: held[i].unwrap_or(row.vm),
                v_init: Complex64::from_polar(row.vm, row.va * PI / 180.0),
            }
        })
        .collect();

    let branches = tables
        .branch
        .iter()
        .filter(|b| b.status != 0.0)
        .enumerate()
        .map(|(i, b)| BranchSpec {
            id: i + 1,
            from_bus: b.fbus,
            to_bus: b.tbus,
            impedance: Complex64::new(b.r, b.x),
        })
        .collect();

    Ok(NetworkCase::new(base, buses, branches)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkError;

    const TWO_BUS: &str = "function mpc = two_bus
% minimal case
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	138	1	1.1	0.9;
	2	1	50	10	0	0	1	1	0	138	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1.0	100	1	250	10;
];
mpc.branch = [
	1	2	0	0.1	0	250	250	250	0	0	1	-360	360;
];
";

    #[test]
    fn minimal_two_bus_tables() {
        let t = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(t.base_mva, 100.0);
        assert_eq!(t.bus.len(), 2);
        assert_eq!(t.gen.len(), 1);
        assert_eq!(t.branch.len(), 1);
        assert_eq!(t.branch[0].x, 0.1);
        assert_eq!(t.bus[1].line, 7);
    }

    #[test]
    fn minimal_two_bus_case() {
        let case = to_network_case(&parse_matpower_case(TWO_BUS).unwrap()).unwrap();
        assert_eq!(case.bus_count(), 2);
        assert_eq!(case.branch_count(), 1);
        assert_eq!(case.buses()[1].p_load, 0.5);
        assert_eq!(case.buses()[1].q_load, 0.1);
        assert_eq!(case.branches()[0].impedance, Complex64::new(0.0, 0.1));
    }

    #[test]
    fn ragged_row_names_its_line() {
        let text = TWO_BUS.replace(
            "\t1\t2\t0\t0.1\t0\t250\t250\t250\t0\t0\t1\t-360\t360;\n",
            "\t1\t2\t0\t0.2\t0\t250\t250\t250\t0\t0\t1\t-360\t360;\n\t1\t2\t0\t0.1\t0\t250;\n",
        );
        match parse_matpower_case(&text).unwrap_err() {
            IngestError::Syntax { line, message } => {
                assert_eq!(line, 14);
                assert!(message.contains("ragged"), "{message}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn non_numeric_entry_names_its_line() {
        let text = TWO_BUS.replacen("50	10", "fifty	10", 1);
        let err = parse_matpower_case(&text).unwrap_err();
        assert_eq!(err.line(), Some(7));
        assert!(err.to_string().contains("fifty"));
    }

    #[test]
    fn unterminated_matrix() {
        let text = TWO_BUS.split("mpc.gen").next().unwrap().replace("];\n", "");
        let err = parse_matpower_case(&text).unwrap_err();
        assert_eq!(err.line(), Some(5));
        assert!(err.to_string().contains("unterminated"));
    }

    #[test]
    fn matrix_running_into_next_assignment_names_its_opening_line() {
        let text = TWO_BUS.replacen("];\n", "\n", 1);
        let err = parse_matpower_case(&text).unwrap_err();
        assert_eq!(err.line(), Some(5), "{err}");
        assert!(err.to_string().contains("unterminated"));
    }

    #[test]
    fn missing_table() {
        let text = TWO_BUS.split("mpc.branch").next().unwrap();
        assert!(matches!(
            parse_matpower_case(text),
            Err(IngestError::Missing("branch"))
        ));
    }

    #[test]
    fn comments_whitespace_and_one_line_matrices() {
        let text = "mpc.baseMVA = 100; % base\n\n  % a comment line\n\
            mpc.bus = [1, 3, 0, 0, 0, 0, 1, 1, 0, 138, 1, 1.1, 0.9; 2 1 50 10 0 0 1 1 0 138 1 1.1 0.9];\n\
            mpc.gen = [ 1   0 0 300 -300 1.0 100 1 250 10 ];\n\
            mpc.gencost = [2 0 0 3 0.01 40 0];\n\
            mpc.bus_name = {\n 'ONE';\n 'TWO';\n};\n\
            mpc.branch = [\n  1 2 0 0.1 0 250 250 250 0 0 1 -360 360 % trailing\n];";
        let t = parse_matpower_case(text).unwrap();
        let reference = parse_matpower_case(TWO_BUS).unwrap();
        assert_eq!(to_network_case(&t).unwrap(), to_network_case(&reference).unwrap());
    }

    #[test]
    fn generator_promotes_pq_bus() {
        let text = TWO_BUS.replace(
            "1	0	0	300	-300	1.0	100	1	250	10;",
            "1	0	0	300	-300	1.0	100	1	250	10;\n\t2	20	0	300	-300	1.03	100	1	250	10;",
        );
        let case = to_network_case(&parse_matpower_case(&text).unwrap()).unwrap();
        assert_eq!(case.buses()[1].kind, BusKind::PV);
        assert_eq!(case.buses()[1].v_setpoint, 1.03);
        assert_eq!(case.buses()[1].p_gen, 0.2);
    }

    #[test]
    fn out_of_service_branch_is_dropped() {
        let text = TWO_BUS.replace(
            "mpc.branch = [\n",
            "mpc.branch = [\n\t1\t2\t0\t0.2\t0\t250\t250\t250\t0\t0\t0\t-360\t360;\n",
        );
        let case = to_network_case(&parse_matpower_case(&text).unwrap()).unwrap();
        assert_eq!(case.branch_count(), 1);
        assert_eq!(case.branches()[0].impedance.im, 0.1);
    }

    #[test]
    fn conversion_errors() {
        let no_slack = TWO_BUS.replace("1	3	0	0", "1	1	0	0");
        let err = to_network_case(&parse_matpower_case(&no_slack).unwrap()).unwrap_err();
        assert!(matches!(err, IngestError::Network(NetworkError::NoSlack)));

        let two_slack = TWO_BUS.replace("2	1	50", "2	3	50");
        let err = to_network_case(&parse_matpower_case(&two_slack).unwrap()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Network(NetworkError::MultipleSlack { count: 2 })
        ));

        let bad_branch = TWO_BUS.replace("1	2	0	0.1", "1	7	0	0.1");
        let err = to_network_case(&parse_matpower_case(&bad_branch).unwrap()).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Network(NetworkError::UnknownBus { branch: 1, bus: 7 })
        ));

        let isolated = TWO_BUS.replace("2	1	50", "2	4	50");
        let err = to_network_case(&parse_matpower_case(&isolated).unwrap()).unwrap_err();
        assert!(matches!(err, IngestError::IsolatedBus { bus: 2 }));

        let bad_type = TWO_BUS.replace("2	1	50", "2	7	50");
        assert_eq!(parse_matpower_case(&bad_type).unwrap_err().line(), Some(7));
    }
}
