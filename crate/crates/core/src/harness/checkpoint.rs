//! Plain-text checkpoints for agent parameters and optimizer state.
//!
//! ```text
//! oprlab-checkpoint 1
//! shared_trunk false
//! net policy
//! activation tanh
//! layers 4 64 2
//! weight 0 64 4
//! <one line per row>
//! bias 0 64
//! <values>
//! ...
//! adam policy
//! step 12
//! hyper 0.9 0.999 1e-8
//! net policy.m
//! ...
//! end
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a load reproduces the
//! saved values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::agent::{AgentOptimizer, AgentParams};
use crate::error::{Error, Result};
use crate::numkit::{Activation, AdamState, Matrix, MlpParams};

pub const MAGIC: &str = "oprlab-checkpoint";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(params: &AgentParams<f64>, opt: &AgentOptimizer<f64>) -> String {
    let mut s = format!("{MAGIC} {VERSION}\nshared_trunk {}\n", params.shared_trunk());
    if let Some(t) = &params.trunk {
        write_net(&mut s, "trunk", t);
    }
    write_net(&mut s, "policy", &params.policy_net);
    write_net(&mut s, "value", &params.value_net);
    if let Some(t) = &opt.trunk {
        write_adam(&mut s, "trunk", t);
    }
    write_adam(&mut s, "policy", &opt.policy);
    write_adam(&mut s, "value", &opt.value);
    s.push_str("end\n");
    s
}

fn write_floats(s: &mut String, xs: &[f64]) {
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:e}");
    }
    s.push('\n');
}

fn write_net(s: &mut String, name: &str, net: &MlpParams<f64>) {
    let _ = writeln!(s, "net {name}\nactivation {}", net.activation().name());
    let sizes: Vec<String> = net.layer_sizes().iter().map(|n| n.to_string()).collect();
    let _ = writeln!(s, "layers {}", sizes.join(" "));
    for (i, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        let _ = writeln!(s, "weight {i} {} {}", w.rows(), w.cols());
        for r in 0..w.rows() {
            write_floats(s, w.row(r));
        }
        let _ = writeln!(s, "bias {i} {}", b.len());
        write_floats(s, b);
    }
}

fn write_adam(s: &mut String, name: &str, st: &AdamState<f64>) {
    let _ = writeln!(s, "adam {name}\nstep {}", st.step_count);
    s.push_str("hyper ");
    write_floats(s, &[st.beta1, st.beta2, st.epsilon]);
    write_net(s, &format!("{name}.m"), &st.first_moment);
    write_net(s, &format!("{name}.v"), &st.second_moment);
}

pub fn save_checkpoint(path: &Path, params: &AgentParams<f64>, opt: &AgentOptimizer<f64>) -> Result<()> {
    std::fs::write(path, write_checkpoint(params, opt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(AgentParams<f64>, AgentOptimizer<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&text)
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

fn err(field: &str, detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        detail: detail.into(),
    }
}

impl<'a> Reader<'a> {
    fn next_line(&mut self, field: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| err(field, "unexpected end of file (truncated checkpoint?)"))
    }

    /// Reads a `key args...` line and returns the arguments.
    fn keyed(&mut self, key: &str, field: &str) -> Result<Vec<&'a str>> {
        let (n, line) = self.next_line(field)?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some(k) if k == key => Ok(toks.collect()),
            other => Err(err(field, format!("line {n}: expected `{key}`, found `{}`", other.unwrap_or("")))),
        }
    }

    fn floats(&mut self, field: &str, count: usize) -> Result<Vec<f64>> {
        let (n, line) = self.next_line(field)?;
        let xs = parse_floats(line, field, n)?;
        if xs.len() != count {
            return Err(err(field, format!("line {n}: expected {count} values, found {}", xs.len())));
        }
        Ok(xs)
    }
}

fn parse_floats(line: &str, field: &str, n: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| err(field, format!("line {n}: `{t}` is not a number")))
        })
        .collect()
}

fn parse_usize(tok: Option<&&str>, field: &str) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| err(field, "expected a non-negative integer"))
}

fn read_net(r: &mut Reader<'_>, name: &str) -> Result<MlpParams<f64>> {
    let got = r.keyed("net", name)?;
    if got.as_slice() != [name] {
        return Err(err(name, format!("expected network `{name}`, found `{}`", got.join(" "))));
    }
    let act_field = format!("{name}.activation");
    let act = r.keyed("activation", &act_field)?;
    let activation = act
        .first()
        .and_then(|a| Activation::parse(a))
        .ok_or_else(|| err(&act_field, format!("unknown activation `{}`", act.join(" "))))?;
    let layers_field = format!("{name}.layers");
    let sizes = r
        .keyed("layers", &layers_field)?
        .iter()
        .map(|t| t.parse::<usize>().map_err(|_| err(&layers_field, format!("bad size `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if sizes.len() < 2 {
        return Err(err(&layers_field, "need at least input and output sizes"));
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for i in 0..sizes.len() - 1 {
        let wf = format!("{name}.weight[{i}]");
        let hdr = r.keyed("weight", &wf)?;
        let (rows, cols) = (parse_usize(hdr.get(1), &wf)?, parse_usize(hdr.get(2), &wf)?);
        if parse_usize(hdr.first(), &wf)? != i || rows != sizes[i + 1] || cols != sizes[i] {
            return Err(err(
                &wf,
                format!("header `{}` disagrees with layers {:?}", hdr.join(" "), sizes),
            ));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(r.floats(&wf, cols)?);
        }
        weights.push(Matrix::from_vec(rows, cols, data)?);
        let bf = format!("{name}.bias[{i}]");
        let hdr = r.keyed("bias", &bf)?;
        if parse_usize(hdr.first(), &bf)? != i || parse_usize(hdr.get(1), &bf)? != rows {
            return Err(err(&bf, format!("header `{}` disagrees with layers {:?}", hdr.join(" "), sizes)));
        }
        biases.push(r.floats(&bf, rows)?);
    }
    MlpParams::from_parts(sizes, weights, biases, activation).map_err(|e| err(name, e.to_string()))
}

fn read_adam(r: &mut Reader<'_>, name: &str, like: &MlpParams<f64>) -> Result<AdamState<f64>> {
    let field = format!("adam.{name}");
    let got = r.keyed("adam", &field)?;
    if got.as_slice() != [name] {
        return Err(err(&field, format!("expected optimizer `{name}`, found `{}`", got.join(" "))));
    }
    let sf = format!("{field}.step");
    let step_count = r
        .keyed("step", &sf)?
        .first()
        .and_then(|t| t.parse::<u64>().ok())
        .ok_or_else(|| err(&sf, "expected a step count"))?;
    let hf = format!("{field}.hyper");
    let hyper = r.keyed("hyper", &hf)?;
    let h = parse_floats(&hyper.join(" "), &hf, 0)?;
    if h.len() != 3 {
        return Err(err(&hf, "expected beta1 beta2 epsilon"));
    }
    let first_moment = read_net(r, &format!("{name}.m"))?;
    let second_moment = read_net(r, &format!("{name}.v"))?;
    for (m, tag) in [(&first_moment, "m"), (&second_moment, "v")] {
        if !m.same_shape(like) {
            return Err(err(&format!("{name}.{tag}"), "moment shape differs from the network"));
        }
    }
    Ok(AdamState {
        step_count,
        first_moment,
        second_moment,
        beta1: h[0],
        beta2: h[1],
        epsilon: h[2],
    })
}

pub fn read_checkpoint(text: &str) -> Result<(AgentParams<f64>, AgentOptimizer<f64>)> {
    let mut r = Reader {
        lines: text.lines().enumerate(),
    };
    let head = r.keyed(MAGIC, "header")?;
    match head.first().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        Some(v) => return Err(err("version", format!("unsupported version {v} (expected {VERSION})"))),
        None => return Err(err("version", "missing version number")),
    }
    let shared = match r.keyed("shared_trunk", "shared_trunk")?.as_slice() {
        ["true"] => true,
        ["false"] => false,
        other => return Err(err("shared_trunk", format!("expected true/false, found `{}`", other.join(" ")))),
    };
    let trunk = if shared { Some(read_net(&mut r, "trunk")?) } else { None };
    let policy = read_net(&mut r, "policy")?;
    let value = read_net(&mut r, "value")?;
    let params = AgentParams::from_nets(policy, value, trunk).map_err(|e| err("agent", e.to_string()))?;
    let trunk_opt = match &params.trunk {
        Some(t) => Some(read_adam(&mut r, "trunk", t)?),
        None => None,
    };
    let opt = AgentOptimizer {
        trunk: trunk_opt,
        policy: read_adam(&mut r, "policy", &params.policy_net)?,
        value: read_adam(&mut r, "value", &params.value_net)?,
    };
    r.keyed("end", "end")?;
    Ok((params, opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::seeding::{rng_for, Stream};

    fn sample(shared: bool) -> (AgentParams<f64>, AgentOptimizer<f64>) {
        let cfg = AgentConfig {
            hidden_sizes: vec![5, 3],
            shared_trunk: shared,
            ..AgentConfig::default()
        };
        let p = AgentParams::new(4, 3, &cfg, &mut rng_for(7, Stream::Init, &[])).unwrap();
        let mut opt = AgentOptimizer::new(&p, 0.9, 0.999, 1e-8);
        let mut p2 = p.clone();
        let mut g = p.zeros_like();
        g.set_flat(&(0..p.num_params()).map(|i| (i as f64).sin() / 3.0).collect::<Vec<_>>())
            .unwrap();
        opt.step(&mut p2, &g, 1e-3).unwrap();
        (p2, opt)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for shared in [false, true] {
            let (p, o) = sample(shared);
            let text = write_checkpoint(&p, &o);
            let (p2, o2) = read_checkpoint(&text).unwrap();
            let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
            assert_eq!(bits(p.to_flat()), bits(p2.to_flat()));
            assert_eq!(o, o2);
            assert_eq!(write_checkpoint(&p2, &o2), text);
        }
    }

    #[test]
    fn truncation_and_corruption_name_the_field() {
        let (p, o) = sample(false);
        let text = write_checkpoint(&p, &o);
        for cut in [0, 10, text.len() / 3, text.len() / 2, text.len() - 5] {
            let e = read_checkpoint(&text[..cut]).unwrap_err();
            assert!(matches!(e, Error::Checkpoint { .. }), "{e}");
        }
        let bad = text.replacen("activation tanh", "activation swish", 1);
        match read_checkpoint(&bad).unwrap_err() {
            Error::Checkpoint { field, .. } => assert_eq!(field, "policy.activation"),
            e => panic!("{e}"),
        }
        let bad = text.replacen("oprlab-checkpoint 1", "oprlab-checkpoint 9", 1);
        assert!(matches!(read_checkpoint(&bad).unwrap_err(), Error::Checkpoint { field, .. } if field == "version"));
        let bad = text.replacen("layers 4 5 3 3", "layers 4 6 3 3", 1);
        assert!(matches!(read_checkpoint(&bad).unwrap_err(), Error::Checkpoint { field, .. } if field == "policy.weight[0]"));
    }
}
