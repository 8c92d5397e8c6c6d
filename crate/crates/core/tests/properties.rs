use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use wafl_core::ir::{
    encode_module, parse_module, validate_module, BlockType, ConstExpr, Export, ExportKind, FuncType, Function,
    Instr, Limits, Module, NumOp, ValType,
};
use wafl_core::passes::coverage::{mark_branch_sites, CoverageSiteKind};
use wafl_core::passes::{instrument, PipelineConfig};

#[derive(Debug, Clone)]
enum Node {
    Nop,
    Const(i64),
    Block(Vec<Node>),
    Loop(Vec<Node>),
    If(Vec<Node>, Option<Vec<Node>>),
    Br(u32),
    BrIf(u32),
    BrTable(Vec<u32>, u32),
    Return,
}

fn node() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        3 => Just(Node::Nop),
        2 => any::<i64>().prop_map(Node::Const),
        1 => any::<u32>().prop_map(Node::Br),
        3 => any::<u32>().prop_map(Node::BrIf),
        1 => (prop::collection::vec(any::<u32>(), 0..4), any::<u32>()).prop_map(|(t, d)| Node::BrTable(t, d)),
        1 => Just(Node::Return),
    ];
    leaf.prop_recursive(5, 48, 5, |inner| {
        let body = prop::collection::vec(inner, 0..5);
        prop_oneof![
            body.clone().prop_map(Node::Block),
            body.clone().prop_map(Node::Loop),
            (body.clone(), prop::option::of(body)).prop_map(|(t, e)| Node::If(t, e)),
        ]
    })
}

/// Flattens into a stack-valid body of type [] -> []. `depth` counts the
/// labels in scope, including the function's.
fn flatten(nodes: &[Node], depth: u32, out: &mut Vec<Instr>) {
    for n in nodes {
        match n {
            Node::Nop => out.push(Instr::Nop),
            Node::Const(v) => out.extend([Instr::I64Const(*v), Instr::Drop]),
            Node::Block(b) | Node::Loop(b) => {
                out.push(if matches!(n, Node::Block(_)) {
                    Instr::Block(BlockType::Empty)
                } else {
                    Instr::Loop(BlockType::Empty)
                });
                flatten(b, depth + 1, out);
                out.push(Instr::End);
            }
            Node::If(t, e) => {
                out.extend([Instr::LocalGet(0), Instr::If(BlockType::Empty)]);
                flatten(t, depth + 1, out);
                if let Some(e) = e {
                    out.push(Instr::Else);
                    flatten(e, depth + 1, out);
                }
                out.push(Instr::End);
            }
            Node::Br(l) => out.push(Instr::Br(l % depth)),
            Node::BrIf(l) => out.extend([Instr::LocalGet(0), Instr::BrIf(l % depth)]),
            Node::BrTable(t, d) => out.extend([
                Instr::LocalGet(0),
                Instr::BrTable {
                    targets: t.iter().map(|l| l % depth).collect(),
                    default: d % depth,
                },
            ]),
            Node::Return => out.push(Instr::Return),
        }
    }
}

fn body_of(nodes: &[Node]) -> Vec<Instr> {
    let mut body = Vec::new();
    flatten(nodes, 1, &mut body);
    body.push(Instr::End);
    body
}

/// Independent reference: resolves every label to the index of its opener
/// via matched block/end pairs, then collects the program points (positions
/// "before instruction j") that are destinations of conditional control
/// transfers, loop headers, or the function entry.
fn cfg_oracle(body: &[Instr]) -> BTreeSet<usize> {
    // Pair each opener with its else/end.
    let mut open = Vec::new();
    let mut end_of = HashMap::new();
    let mut else_of = HashMap::new();
    for (i, ins) in body.iter().enumerate() {
        match ins {
            Instr::Block(_) | Instr::Loop(_) | Instr::If(_) => open.push(i),
            Instr::Else => {
                else_of.insert(*open.last().unwrap(), i);
            }
            Instr::End => {
                if let Some(o) = open.pop() {
                    end_of.insert(o, i);
                }
            }
            _ => {}
        }
    }
    // Enclosing openers at every instruction, innermost last.
    let mut points = BTreeSet::from([0usize]);
    let mut scope: Vec<usize> = Vec::new();
    let branch_dest = |scope: &[usize], label: u32| -> Option<usize> {
        let k = scope.len().checked_sub(1 + label as usize)?;
        let opener = scope[k];
        Some(match body[opener] {
            Instr::Loop(_) => opener + 1,
            _ => end_of[&opener] + 1,
        })
    };
    for (i, ins) in body.iter().enumerate() {
        match ins {
            Instr::If(_) => {
                points.insert(i + 1);
                if let Some(e) = else_of.get(&i) {
                    points.insert(e + 1);
                }
                scope.push(i);
            }
            Instr::Loop(_) => {
                points.insert(i + 1);
                scope.push(i);
            }
            Instr::Block(_) => scope.push(i),
            Instr::End => {
                scope.pop();
            }
            Instr::BrIf(l) => {
                points.insert(i + 1);
                points.extend(branch_dest(&scope, *l));
            }
            Instr::BrTable { targets, default } => {
                for l in targets.iter().chain([default]) {
                    points.extend(branch_dest(&scope, *l));
                }
            }
            _ => {}
        }
    }
    points
}

fn marked_points(body: &[Instr]) -> BTreeSet<usize> {
    mark_branch_sites(body)
        .into_iter()
        .map(|s| match s.kind {
            CoverageSiteKind::FunctionEntry => s.index,
            _ => s.index + 1,
        })
        .collect()
}

fn wrap(body: Vec<Instr>) -> Module {
    let mut m = Module {
        memory: Some(Limits { min: 1, max: None }),
        ..Default::default()
    };
    let t = m.intern_type(FuncType::new([ValType::I32], []));
    let s = m.intern_type(FuncType::new([], []));
    m.add_global(ValType::I32, true, ConstExpr::I32(65536));
    m.add_function(Function {
        type_index: t,
        locals: vec![],
        body,
    });
    let start = m.add_function(Function {
        type_index: s,
        locals: vec![],
        body: vec![Instr::I32Const(1), Instr::Call(0), Instr::End],
    });
    m.exports.push(Export {
        name: "_start".into(),
        kind: ExportKind::Func,
        index: start,
    });
    m
}

#[test]
fn oracle_agrees_on_reference_suite() {
    use Instr::*;
    let e = BlockType::Empty;
    let suite: Vec<Vec<Instr>> = vec![
        vec![End],
        vec![Loop(e), Br(0), End, End],
        vec![Block(e), Block(e), LocalGet(0), BrIf(1), End, End, End],
        vec![LocalGet(0), If(e), Nop, Else, Nop, End, End],
        vec![LocalGet(0), If(e), LocalGet(0), BrIf(0), End, End],
        vec![Block(e), Loop(e), LocalGet(0), BrTable { targets: vec![0, 1], default: 2 }, End, End, End],
        vec![Loop(e), Block(e), LocalGet(0), BrIf(1), LocalGet(0), BrIf(0), End, End, End],
    ];
    for body in suite {
        assert_eq!(marked_points(&body), cfg_oracle(&body), "{body:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn marking_matches_cfg_oracle(nodes in prop::collection::vec(node(), 0..8)) {
        let body = body_of(&nodes);
        prop_assert_eq!(marked_points(&body), cfg_oracle(&body));
    }

    #[test]
    fn instrumented_random_bodies_validate(nodes in prop::collection::vec(node(), 0..8), seed in any::<u64>()) {
        let m = wrap(body_of(&nodes));
        prop_assert!(validate_module(&m).is_valid(), "{}", validate_module(&m));
        let out = instrument(&m, &PipelineConfig::all(Some(seed), Some(seed))).unwrap();
        let bytes = encode_module(&out.module).unwrap();
        prop_assert!(wasmparser::Validator::new().validate_all(&bytes).is_ok());
        // One shim per marked site plus one stack site per function.
        let sites = mark_branch_sites(&m.functions[0].body).len() + mark_branch_sites(&m.functions[1].body).len();
        prop_assert!(out.sites.count(wafl_core::SiteKind::Coverage) > sites);
    }

    #[test]
    fn encode_parse_round_trip(nodes in prop::collection::vec(node(), 0..8), k in any::<i32>(), f in any::<u64>()) {
        let mut body = vec![Instr::I32Const(k), Instr::Drop, Instr::F64Const(f), Instr::Drop,
            Instr::I32Const(k), Instr::Num(NumOp::I32Popcnt), Instr::Drop];
        body.extend(body_of(&nodes));
        let m = wrap(body);
        let bytes = encode_module(&m).unwrap();
        prop_assert_eq!(parse_module(&bytes).unwrap(), m);
        prop_assert!(wasmparser::Validator::new().validate_all(&bytes).is_ok());
    }
}
