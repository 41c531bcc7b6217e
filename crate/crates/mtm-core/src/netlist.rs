//! SPICE-like netlist parser and circuit description.
//!
//! # Grammar
//!
//! One statement per line; `*` starts a comment; `+` continues the previous
//! line. Names and keywords are case-insensitive; the first letter of an
//! element name selects its kind. Ground is always node `0` and every node
//! voltage is referenced to it.
//!
//! ```text
//! Rname n+ n- value                resistor (ohm, > 0)
//! Cname n+ n- value                capacitor (farad, > 0)
//! Lname n+ n- value [R=rs]         inductor (henry, > 0; optional series ohm)
//! Vname n+ n- [DC] val | PULSE(v1 v2 td tr tf pw per) | SIN(vo va f [td th]) | PWL(t v ...)
//! Iname n+ n- ...                  current source, same waveforms
//! Gname out+ out- c+ c- gm        voltage-controlled current source
//! Dname a k [IS=..] [VT=..]        diode (Shockley)
//! Mname d g s [NMOS|PMOS] [KP=..] [VTO=..] [LAMBDA=..] [W=..] [L=..]
//! Tname p1 0 p2 0 L=.. C=.. LEN=.. [R=..] [G=..]   transmission line,
//!                                  per-meter L/C/R/G, length in meters;
//!                                  both reference terminals must be ground
//! .tran <step> <stop>              transient analysis (seconds)
//! .partition wire <name>[,<name>...]
//! .print v(<node>) i(<line>.<port>) ...
//! .end
//! ```
//!
//! Values accept engineering suffixes `f p n u m k meg g` (case-insensitive);
//! any further trailing letters are ignored as units (`1kohm`). All units are
//! SI: seconds, ohms, farads, henries, meters.

use std::collections::{BTreeMap, BTreeSet};

use crate::tline::LineParams;

/// Element kind, selected by the first letter of the name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Resistor,
    Capacitor,
    Inductor,
    Vsource,
    Isource,
    Vccs,
    Diode,
    Mosfet,
}

impl ElementKind {
    pub fn letter(self) -> char {
        match self {
            ElementKind::Resistor => 'R',
            ElementKind::Capacitor => 'C',
            ElementKind::Inductor => 'L',
            ElementKind::Vsource => 'V',
            ElementKind::Isource => 'I',
            ElementKind::Vccs => 'G',
            ElementKind::Diode => 'D',
            ElementKind::Mosfet => 'M',
        }
    }
}

/// Independent source waveform.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Dc(f64),
    /// PULSE(v1 v2 td tr tf pw per); per = 0 means single pulse.
    Pulse {
        v1: f64,
        v2: f64,
        td: f64,
        tr: f64,
        tf: f64,
        pw: f64,
        per: f64,
    },
    /// SIN(vo va freq td theta)
    Sin {
        vo: f64,
        va: f64,
        freq: f64,
        td: f64,
        theta: f64,
    },
    /// PWL(t1 v1 t2 v2 ...), clamped outside the listed span.
    Pwl(Vec<(f64, f64)>),
}

impl Waveform {
    /// Source value at time `t` (the supply is switched on at t = 0).
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            Waveform::Dc(v) => *v,
            Waveform::Pulse {
                v1,
                v2,
                td,
                tr,
                tf,
                pw,
                per,
            } => {
                if t < *td {
                    return *v1;
                }
                let mut tau = t - td;
                if *per > 0.0 {
                    tau %= per;
                }
                if tau < *tr {
                    if *tr == 0.0 {
                        *v2
                    } else {
                        v1 + (v2 - v1) * tau / tr
                    }
                } else if tau < tr + pw {
                    *v2
                } else if tau < tr + pw + tf {
                    if *tf == 0.0 {
                        *v1
                    } else {
                        v2 + (v1 - v2) * (tau - tr - pw) / tf
                    }
                } else {
                    *v1
                }
            }
            Waveform::Sin {
                vo,
                va,
                freq,
                td,
                theta,
            } => {
                if t < *td {
                    *vo
                } else {
                    let tau = t - td;
                    vo + va * (-theta * tau).exp() * (2.0 * std::f64::consts::PI * freq * tau).sin()
                }
            }
            Waveform::Pwl(points) => {
                if points.is_empty() {
                    return 0.0;
                }
                if t <= points[0].0 {
                    return points[0].1;
                }
                for w in points.windows(2) {
                    let (t0, v0) = w[0];
                    let (t1, v1) = w[1];
                    if t <= t1 {
                        if t1 == t0 {
                            return v1;
                        }
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                points.last().unwrap().1
            }
        }
    }
}

/// A two-or-more terminal circuit element.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub kind: ElementKind,
    pub name: String,
    /// Ordered node list; meaning depends on the kind.
    pub terminals: Vec<String>,
    /// Named real parameters (SI units). The primary value is under `"value"`.
    pub params: BTreeMap<String, f64>,
    /// Source waveform for V/I elements.
    pub waveform: Option<Waveform>,
}

impl Element {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn param_or(&self, name: &str, default: f64) -> f64 {
        self.param(name).unwrap_or(default)
    }

    pub fn value(&self) -> f64 {
        self.param_or("value", 0.0)
    }

    pub fn is_nonlinear(&self) -> bool {
        matches!(self.kind, ElementKind::Diode | ElementKind::Mosfet)
    }
}

/// Transmission-line instance; both reference terminals are ground.
#[derive(Debug, Clone, PartialEq)]
pub struct Tline {
    pub name: String,
    /// Port nodes (port 1, port 2).
    pub ports: [String; 2],
    pub params: LineParams,
}

/// `.print` output request.
#[derive(Debug, Clone, PartialEq)]
pub enum PrintVar {
    NodeVoltage(String),
    /// Port current of a transmission line (line name, port 1 or 2).
    PortCurrent(String, u8),
}

/// Analysis directives collected from `.`-lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Directives {
    /// `.tran step stop`, both in seconds.
    pub tran: Option<(f64, f64)>,
    /// Wires named by `.partition wire`.
    pub partition_wires: Vec<String>,
    pub prints: Vec<PrintVar>,
}

/// Parsed circuit: nodes, elements, transmission lines, and directives.
#[derive(Debug, Clone, PartialEq)]
pub struct Netlist {
    /// All node identifiers including ground `"0"`.
    pub nodes: BTreeSet<String>,
    pub elements: Vec<Element>,
    pub tlines: Vec<Tline>,
    pub directives: Directives,
}

impl Netlist {
    pub fn empty() -> Self {
        let mut nodes = BTreeSet::new();
        nodes.insert("0".to_string());
        Netlist {
            nodes,
            elements: Vec::new(),
            tlines: Vec::new(),
            directives: Directives::default(),
        }
    }

    pub fn tline(&self, name: &str) -> Option<&Tline> {
        let needle = name.to_ascii_lowercase();
        self.tlines
            .iter()
            .find(|t| t.name.to_ascii_lowercase() == needle)
    }
}

/// Parse failure with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

/// Parse a numeric token with engineering suffixes.
///
/// `1k` = 1e3, `1meg` = 1e6, `1p` = 1e-12, exact as 64-bit floats; trailing
/// unit letters after the suffix are ignored.
pub fn parse_value(token: &str) -> Result<f64, String> {
    let s = token.trim();
    if s.is_empty() {
        return Err("empty value".to_string());
    }
    let bytes = s.as_bytes();
    let mut end = 0;
    // Longest leading float: sign, digits, '.', digits, exponent.
    if bytes[end] == b'+' || bytes[end] == b'-' {
        end += 1;
    }
    let mut saw_digit = false;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
        saw_digit = true;
    }
    if end < bytes.len() && bytes[end] == b'.' {
        end += 1;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
            saw_digit = true;
        }
    }
    if !saw_digit {
        return Err(format!("`{s}` is not a number"));
    }
    if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
        // Only an exponent if digits (or signed digits) follow.
        let mut k = end + 1;
        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
            k += 1;
        }
        if k < bytes.len() && bytes[k].is_ascii_digit() {
            end = k;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
        }
    }
    let mantissa: f64 = s[..end]
        .parse()
        .map_err(|_| format!("`{s}` is not a number"))?;
    let rest = s[end..].to_ascii_lowercase();
    if rest.chars().any(|c| !c.is_ascii_alphabetic()) {
        return Err(format!("`{s}` has a malformed suffix"));
    }
    let mult = if rest.starts_with("meg") {
        1e6
    } else {
        match rest.chars().next() {
            None => 1.0,
            Some('f') => 1e-15,
            Some('p') => 1e-12,
            Some('n') => 1e-9,
            Some('u') => 1e-6,
            Some('m') => 1e-3,
            Some('k') => 1e3,
            Some('g') => 1e9,
            Some(_) => 1.0, // unit letters only, e.g. "5ohm"
        }
    };
    Ok(mantissa * mult)
}

/// Join `+` continuation lines, remembering each statement's first source line.
fn logical_lines(text: &str) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('+') {
            if let Some(last) = out.last_mut() {
                last.1.push(' ');
                last.1.push_str(rest.trim());
                continue;
            }
        }
        out.push((idx + 1, line.to_string()));
    }
    out
}

/// Split a statement into whitespace tokens, keeping `(...)` groups together.
fn tokenize(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut depth = 0usize;
    for c in line.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            c if c.is_whitespace() && depth == 0 => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            ',' if depth == 0 => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            _ => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn canon_node(token: &str) -> String {
    token.to_ascii_lowercase()
}

struct LineParser<'a> {
    lineno: usize,
    tokens: &'a [String],
}

impl<'a> LineParser<'a> {
    fn value(&self, idx: usize, what: &str) -> Result<f64, ParseError> {
        let tok = self
            .tokens
            .get(idx)
            .ok_or_else(|| err(self.lineno, format!("missing {what}")))?;
        parse_value(tok).map_err(|e| err(self.lineno, e))
    }

    /// Parse trailing `KEY=value` pairs and bare flags starting at `idx`.
    fn named_params(
        &self,
        idx: usize,
        flags: &[&str],
    ) -> Result<BTreeMap<String, f64>, ParseError> {
        let mut params = BTreeMap::new();
        for tok in &self.tokens[idx.min(self.tokens.len())..] {
            if let Some((key, val)) = tok.split_once('=') {
                let key = key.to_ascii_lowercase();
                let val = parse_value(val).map_err(|e| err(self.lineno, e))?;
                params.insert(key, val);
            } else if flags.iter().any(|f| tok.eq_ignore_ascii_case(f)) {
                params.insert(tok.to_ascii_lowercase(), 1.0);
            } else {
                return Err(err(self.lineno, format!("unexpected token `{tok}`")));
            }
        }
        Ok(params)
    }
}

fn parse_source_waveform(lp: &LineParser, start: usize) -> Result<Waveform, ParseError> {
    let tokens = &lp.tokens[start..];
    if tokens.is_empty() {
        return Err(err(lp.lineno, "missing source value"));
    }
    let first = tokens[0].to_ascii_uppercase();
    let parse_args = |tok: &str, name: &str| -> Result<Vec<f64>, ParseError> {
        let inner = tok[name.len()..]
            .trim_start_matches('(')
            .trim_end_matches(')');
        inner
            .split_whitespace()
            .map(|a| parse_value(a).map_err(|e| err(lp.lineno, e)))
            .collect()
    };
    if first.starts_with("PULSE") {
        let a = parse_args(&tokens[0], "PULSE")?;
        if a.len() != 7 {
            return Err(err(lp.lineno, "PULSE takes 7 arguments"));
        }
        return Ok(Waveform::Pulse {
            v1: a[0],
            v2: a[1],
            td: a[2],
            tr: a[3],
            tf: a[4],
            pw: a[5],
            per: a[6],
        });
    }
    if first.starts_with("SIN") {
        let a = parse_args(&tokens[0], "SIN")?;
        if a.len() < 3 {
            return Err(err(lp.lineno, "SIN takes at least 3 arguments"));
        }
        return Ok(Waveform::Sin {
            vo: a[0],
            va: a[1],
            freq: a[2],
            td: a.get(3).copied().unwrap_or(0.0),
            theta: a.get(4).copied().unwrap_or(0.0),
        });
    }
    if first.starts_with("PWL") {
        let a = parse_args(&tokens[0], "PWL")?;
        if a.len() < 2 || a.len() % 2 != 0 {
            return Err(err(lp.lineno, "PWL takes time/value pairs"));
        }
        let pts: Vec<(f64, f64)> = a.chunks(2).map(|c| (c[0], c[1])).collect();
        if pts.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(err(lp.lineno, "PWL times must be nondecreasing"));
        }
        return Ok(Waveform::Pwl(pts));
    }
    let idx = if first == "DC" { start + 1 } else { start };
    Ok(Waveform::Dc(lp.value(idx, "source value")?))
}

/// Parse a netlist from text.
pub fn parse_netlist(text: &str) -> Result<Netlist, ParseError> {
    let mut netlist = Netlist::empty();
    let mut names: BTreeSet<String> = BTreeSet::new();
    let mut directive_lines: Vec<(usize, Vec<String>)> = Vec::new();

    for (lineno, line) in logical_lines(text) {
        if line.is_empty() || line.starts_with('*') {
            continue;
        }
        let tokens = tokenize(&line);
        if tokens.is_empty() {
            continue;
        }
        if tokens[0].starts_with('.') {
            if tokens[0].eq_ignore_ascii_case(".end") {
                break;
            }
            directive_lines.push((lineno, tokens));
            continue;
        }

        let name = tokens[0].clone();
        let key = name.to_ascii_lowercase();
        if !names.insert(key) {
            return Err(err(lineno, format!("duplicate element name `{name}`")));
        }
        let lp = LineParser {
            lineno,
            tokens: &tokens,
        };
        let kind_letter = name.chars().next().unwrap().to_ascii_uppercase();
        let declare = |netlist: &mut Netlist, node: &str| -> String {
            let n = canon_node(node);
            netlist.nodes.insert(n.clone());
            n
        };
        let need_terms = |n: usize| -> Result<Vec<String>, ParseError> {
            if tokens.len() < 1 + n {
                return Err(err(lineno, format!("`{name}` needs {n} terminals")));
            }
            Ok(tokens[1..1 + n].to_vec())
        };

        match kind_letter {
            'R' | 'C' | 'L' => {
                let kind = match kind_letter {
                    'R' => ElementKind::Resistor,
                    'C' => ElementKind::Capacitor,
                    _ => ElementKind::Inductor,
                };
                let terms = need_terms(2)?;
                let value = lp.value(3, "value")?;
                if value <= 0.0 {
                    let what = match kind {
                        ElementKind::Resistor => "resistance",
                        ElementKind::Capacitor => "capacitance",
                        _ => "inductance",
                    };
                    return Err(err(lineno, format!("nonpositive {what} on `{name}`")));
                }
                let mut params = lp.named_params(4, &[])?;
                if kind == ElementKind::Inductor {
                    if params.get("r").copied().unwrap_or(0.0) < 0.0 {
                        return Err(err(lineno, "negative series resistance"));
                    }
                } else if !params.is_empty() {
                    return Err(err(lineno, format!("unexpected parameters on `{name}`")));
                }
                params.insert("value".to_string(), value);
                let terminals = terms.iter().map(|t| declare(&mut netlist, t)).collect();
                netlist.elements.push(Element {
                    kind,
                    name,
                    terminals,
                    params,
                    waveform: None,
                });
            }
            'V' | 'I' => {
                let kind = if kind_letter == 'V' {
                    ElementKind::Vsource
                } else {
                    ElementKind::Isource
                };
                let terms = need_terms(2)?;
                let waveform = parse_source_waveform(&lp, 3)?;
                let terminals = terms.iter().map(|t| declare(&mut netlist, t)).collect();
                netlist.elements.push(Element {
                    kind,
                    name,
                    terminals,
                    params: BTreeMap::new(),
                    waveform: Some(waveform),
                });
            }
            'G' => {
                let terms = need_terms(4)?;
                let gm = lp.value(5, "transconductance")?;
                let mut params = BTreeMap::new();
                params.insert("value".to_string(), gm);
                let terminals = terms.iter().map(|t| declare(&mut netlist, t)).collect();
                netlist.elements.push(Element {
                    kind: ElementKind::Vccs,
                    name,
                    terminals,
                    params,
                    waveform: None,
                });
            }
            'D' => {
                let terms = need_terms(2)?;
                let params = lp.named_params(3, &[])?;
                let is = params.get("is").copied().unwrap_or(1e-14);
                let vt = params.get("vt").copied().unwrap_or(0.025852);
                if is <= 0.0 {
                    return Err(err(lineno, "diode saturation current must be positive"));
                }
                if vt <= 0.0 {
                    return Err(err(lineno, "diode thermal voltage must be positive"));
                }
                let terminals = terms.iter().map(|t| declare(&mut netlist, t)).collect();
                netlist.elements.push(Element {
                    kind: ElementKind::Diode,
                    name,
                    terminals,
                    params,
                    waveform: None,
                });
            }
            'M' => {
                let terms = need_terms(3)?;
                let mut params = lp.named_params(4, &["nmos", "pmos"])?;
                params.remove("nmos");
                if params.get("kp").copied().unwrap_or(2e-5) <= 0.0 {
                    return Err(err(lineno, "KP must be positive"));
                }
                let terminals = terms.iter().map(|t| declare(&mut netlist, t)).collect();
                netlist.elements.push(Element {
                    kind: ElementKind::Mosfet,
                    name,
                    terminals,
                    params,
                    waveform: None,
                });
            }
            'T' => {
                let terms = need_terms(4)?;
                if terms[1] != "0" || terms[3] != "0" {
                    return Err(err(
                        lineno,
                        "transmission-line reference terminals must be ground `0`",
                    ));
                }
                if terms[0] == "0" || terms[2] == "0" {
                    return Err(err(lineno, "transmission-line port may not be ground"));
                }
                let params = lp.named_params(5, &[])?;
                let get = |k: &str| params.get(k).copied();
                let l = get("l").ok_or_else(|| err(lineno, "missing L= on line"))?;
                let c = get("c").ok_or_else(|| err(lineno, "missing C= on line"))?;
                let len = get("len").ok_or_else(|| err(lineno, "missing LEN= on line"))?;
                let r = get("r").unwrap_or(0.0);
                let g = get("g").unwrap_or(0.0);
                let line_params = LineParams::new(r, l, g, c, len)
                    .map_err(|e| err(lineno, format!("`{name}`: {e}")))?;
                let p1 = declare(&mut netlist, &terms[0]);
                let p2 = declare(&mut netlist, &terms[2]);
                netlist.tlines.push(Tline {
                    name,
                    ports: [p1, p2],
                    params: line_params,
                });
            }
            other => {
                return Err(err(lineno, format!("unknown element kind `{other}`")));
            }
        }
    }

    // Directives resolve against the full node/element sets.
    for (lineno, tokens) in directive_lines {
        let dir = tokens[0].to_ascii_lowercase();
        match dir.as_str() {
            ".tran" => {
                if tokens.len() != 3 {
                    return Err(err(lineno, ".tran takes <step> <stop>"));
                }
                let step = parse_value(&tokens[1]).map_err(|e| err(lineno, e))?;
                let stop = parse_value(&tokens[2]).map_err(|e| err(lineno, e))?;
                if step <= 0.0 {
                    return Err(err(lineno, ".tran step must be positive"));
                }
                if stop <= step {
                    return Err(err(lineno, ".tran stop must exceed step"));
                }
                netlist.directives.tran = Some((step, stop));
            }
            ".partition" => {
                if tokens.len() < 3 || !tokens[1].eq_ignore_ascii_case("wire") {
                    return Err(err(lineno, ".partition takes `wire <name>[,<name>...]`"));
                }
                for tok in &tokens[2..] {
                    netlist.directives.partition_wires.push(tok.clone());
                }
            }
            ".print" => {
                for tok in &tokens[1..] {
                    let lower = tok.to_ascii_lowercase();
                    if let Some(inner) = lower.strip_prefix("v(").and_then(|s| s.strip_suffix(')'))
                    {
                        let node = canon_node(inner);
                        if !netlist.nodes.contains(&node) {
                            return Err(err(lineno, format!("undeclared node `{inner}`")));
                        }
                        netlist.directives.prints.push(PrintVar::NodeVoltage(node));
                    } else if let Some(inner) =
                        lower.strip_prefix("i(").and_then(|s| s.strip_suffix(')'))
                    {
                        let (line_name, port) = inner
                            .split_once('.')
                            .ok_or_else(|| err(lineno, "i() takes <line>.<port>"))?;
                        let port: u8 = port
                            .parse()
                            .map_err(|_| err(lineno, "port must be 1 or 2"))?;
                        if port != 1 && port != 2 {
                            return Err(err(lineno, "port must be 1 or 2"));
                        }
                        let t = netlist
                            .tline(line_name)
                            .ok_or_else(|| err(lineno, format!("unknown line `{line_name}`")))?;
                        let name = t.name.clone();
                        netlist
                            .directives
                            .prints
                            .push(PrintVar::PortCurrent(name, port));
                    } else {
                        return Err(err(lineno, format!("unknown print variable `{tok}`")));
                    }
                }
            }
            other => {
                return Err(err(lineno, format!("unknown directive `{other}`")));
            }
        }
    }

    Ok(netlist)
}

/// Diagnostic severity from [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

/// Non-fatal finding about a parsed netlist.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{}: {}", tag, self.message)
    }
}

/// Check connectivity contracts and directive references.
///
/// Returns an empty list when every non-ground node has at least two element
/// attachments or touches a source, and every `.partition` wire names an
/// existing transmission line.
pub fn validate(netlist: &Netlist) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    let mut attach: BTreeMap<&str, usize> = BTreeMap::new();
    let mut sourced: BTreeSet<&str> = BTreeSet::new();
    for el in &netlist.elements {
        for t in &el.terminals {
            *attach.entry(t.as_str()).or_insert(0) += 1;
            if matches!(el.kind, ElementKind::Vsource | ElementKind::Isource) {
                sourced.insert(t.as_str());
            }
        }
    }
    for t in &netlist.tlines {
        for p in &t.ports {
            *attach.entry(p.as_str()).or_insert(0) += 1;
        }
    }
    for node in &netlist.nodes {
        if node == "0" {
            continue;
        }
        let n = attach.get(node.as_str()).copied().unwrap_or(0);
        if n == 0 {
            out.push(Diagnostic {
                severity: Severity::Warning,
                message: format!("node `{node}` is not attached to any element"),
            });
        } else if n < 2 && !sourced.contains(node.as_str()) {
            out.push(Diagnostic {
                severity: Severity::Warning,
                message: format!("node `{node}` has a single attachment and no source"),
            });
        }
    }

    for wire in &netlist.directives.partition_wires {
        if netlist.tline(wire).is_none() {
            out.push(Diagnostic {
                severity: Severity::Error,
                message: format!(".partition wire `{wire}` is not a transmission line"),
            });
        }
    }

    out
}

fn fmt_value(v: f64) -> String {
    format!("{v:e}")
}

/// Render a netlist back to its textual form.
///
/// The output reparses to a structurally identical [`Netlist`].
pub fn unparse_netlist(netlist: &Netlist) -> String {
    let mut out = String::new();
    for el in &netlist.elements {
        out.push_str(&el.name);
        for t in &el.terminals {
            out.push(' ');
            out.push_str(t);
        }
        match el.kind {
            ElementKind::Vsource | ElementKind::Isource => {
                match el.waveform.as_ref().expect("source waveform") {
                    Waveform::Dc(v) => out.push_str(&format!(" DC {}", fmt_value(*v))),
                    Waveform::Pulse {
                        v1,
                        v2,
                        td,
                        tr,
                        tf,
                        pw,
                        per,
                    } => out.push_str(&format!(
                        " PULSE({} {} {} {} {} {} {})",
                        fmt_value(*v1),
                        fmt_value(*v2),
                        fmt_value(*td),
                        fmt_value(*tr),
                        fmt_value(*tf),
                        fmt_value(*pw),
                        fmt_value(*per)
                    )),
                    Waveform::Sin {
                        vo,
                        va,
                        freq,
                        td,
                        theta,
                    } => out.push_str(&format!(
                        " SIN({} {} {} {} {})",
                        fmt_value(*vo),
                        fmt_value(*va),
                        fmt_value(*freq),
                        fmt_value(*td),
                        fmt_value(*theta)
                    )),
                    Waveform::Pwl(pts) => {
                        out.push_str(" PWL(");
                        for (i, (t, v)) in pts.iter().enumerate() {
                            if i > 0 {
                                out.push(' ');
                            }
                            out.push_str(&format!("{} {}", fmt_value(*t), fmt_value(*v)));
                        }
                        out.push(')');
                    }
                }
            }
            _ => {
                if let Some(v) = el.param("value") {
                    out.push_str(&format!(" {}", fmt_value(v)));
                }
                for (k, v) in &el.params {
                    if k == "value" {
                        continue;
                    }
                    if k == "pmos" {
                        out.push_str(" PMOS");
                        continue;
                    }
                    out.push_str(&format!(" {}={}", k.to_ascii_uppercase(), fmt_value(*v)));
                }
            }
        }
        out.push('\n');
    }
    for t in &netlist.tlines {
        out.push_str(&format!(
            "{} {} 0 {} 0 L={} C={} LEN={}",
            t.name,
            t.ports[0],
            t.ports[1],
            fmt_value(t.params.l),
            fmt_value(t.params.c),
            fmt_value(t.params.length)
        ));
        if t.params.r != 0.0 {
            out.push_str(&format!(" R={}", fmt_value(t.params.r)));
        }
        if t.params.g != 0.0 {
            out.push_str(&format!(" G={}", fmt_value(t.params.g)));
        }
        out.push('\n');
    }
    if let Some((step, stop)) = netlist.directives.tran {
        out.push_str(&format!(
            ".tran {} {}\n",
            fmt_value(step),
            fmt_value(stop)
        ));
    }
    if !netlist.directives.partition_wires.is_empty() {
        out.push_str(".partition wire ");
        out.push_str(&netlist.directives.partition_wires.join(","));
        out.push('\n');
    }
    if !netlist.directives.prints.is_empty() {
        out.push_str(".print");
        for p in &netlist.directives.prints {
            match p {
                PrintVar::NodeVoltage(n) => out.push_str(&format!(" v({n})")),
                PrintVar::PortCurrent(l, p) => out.push_str(&format!(" i({l}.{p})")),
            }
        }
        out.push('\n');
    }
    out.push_str(".end\n");
    out
}
