use std::collections::BTreeMap;

use lios_core::disasm::listing::{parse_listing, write_listing};
use lios_core::disasm::resolve::analyse_functions;
use lios_core::disasm::{
    annotate_calls, build_function, compute_use_def, CallInfo, CallTarget, DisasmError, FunctionBody, Location,
    ResolvedValue, Resolver,
};
use lios_core::macho::{parse_macho, MachoImage};
use lios_core::objc::{self, ObjcModel};
use lios_fixturegen::asm::assemble;
use lios_fixturegen::{builtin, builtin_names, generate, parse_manifest, ExpTarget, Expected};
use proptest::prelude::*;

mod common;
use common::{path_use_def, to_exp};

const BASE: u64 = 0x1000;

fn snippet(src: &[&str]) -> FunctionBody {
    let words = assemble(src, BASE).unwrap();
    let code: BTreeMap<u64, [u8; 4]> =
        words.iter().enumerate().map(|(i, w)| (BASE + 4 * i as u64, w.to_le_bytes())).collect();
    let mut body = build_function(&code, BASE, BASE + 4 * words.len() as u64, "f").unwrap();
    annotate_calls(&mut body, &CallInfo::default(), None);
    compute_use_def(&mut body);
    body
}

fn at(i: u64) -> u64 {
    BASE + 4 * i
}

fn x(n: u8) -> Location {
    Location::Reg(n)
}

fn fixture(name: &str) -> (MachoImage, ObjcModel, Expected) {
    let fx = generate(&builtin(name).unwrap()).unwrap();
    let image = parse_macho(&fx.binary).unwrap();
    let model = objc::analyze(&image);
    (image, model, fx.expected)
}

fn assert_oracle(body: &FunctionBody) {
    let (edges, params) = path_use_def(body);
    assert_eq!(body.use_def, edges, "{} use-def edges", body.name);
    assert_eq!(body.param_uses, params, "{} entry-value uses", body.name);
}

fn assert_partition(body: &FunctionBody) {
    let mut ea = body.entry_ea;
    for b in &body.blocks {
        assert_eq!(b.ea, ea, "{} blocks must be contiguous", body.name);
        for i in &b.instructions {
            assert_eq!(i.ea, ea);
            ea += 4;
        }
    }
    assert_eq!(ea, body.end_ea);
}

#[test]
fn register_def_reaches_use() {
    let body = snippet(&["mov x8, #5", "mov x0, x8", "ret"]);
    assert_eq!(body.defs_of(at(1), x(8)), vec![at(0)]);
    assert_eq!(body.instruction_count(), 3);
    assert_oracle(&body);
}

#[test]
fn diamond_has_two_reaching_defs() {
    let body = snippet(&[
        "cbz x2, Lelse",
        "mov x0, #1",
        "b Ljoin",
        "Lelse:",
        "mov x0, #2",
        "Ljoin:",
        "add x1, x0, #1",
        "ret",
    ]);
    let blocks: Vec<(u64, Vec<u64>)> = body.blocks.iter().map(|b| (b.ea, b.successors.clone())).collect();
    assert_eq!(
        blocks,
        vec![(at(0), vec![at(1), at(3)]), (at(1), vec![at(4)]), (at(3), vec![at(4)]), (at(4), vec![])]
    );
    let mut defs = body.defs_of(at(4), x(0));
    defs.sort_unstable();
    assert_eq!(defs, vec![at(1), at(3)]);
    assert!(body.param_reaches(at(0), x(2)));
    assert_oracle(&body);
}

#[test]
fn stack_slots_carry_definitions() {
    let body = snippet(&["str x0, [sp, #16]", "ldr x1, [sp, #16]", "ret"]);
    assert_eq!(body.defs_of(at(1), Location::Stack(16)), vec![at(0)]);
    assert!(!body.instruction(at(1)).unwrap().uses.contains(&Location::Sp));

    // Slots are relative to sp on entry, through frame setup and the frame pointer.
    let body = snippet(&[
        "stp x29, x30, [sp, #-32]!",
        "mov x29, sp",
        "str x0, [sp, #16]",
        "ldr x2, [x29, #16]",
        "ldp x29, x30, [sp], #32",
        "ret",
    ]);
    assert_eq!(body.defs_of(at(3), Location::Stack(-16)), vec![at(2)]);
    assert_eq!(body.defs_of(at(4), Location::Stack(-32)), vec![at(0)]);
    assert_eq!(body.defs_of(at(4), Location::Stack(-24)), vec![at(0)]);
    assert_oracle(&body);
}

#[test]
fn loops_converge() {
    let body = snippet(&[
        "mov x0, #0",
        "Lloop:",
        "add x0, x0, #1",
        "cmp x0, #10",
        "b.ne Lloop",
        "ret",
    ]);
    let mut defs = body.defs_of(at(1), x(0));
    defs.sort_unstable();
    assert_eq!(defs, vec![at(0), at(1)]);
    assert_eq!(body.predecessors(at(1)), &[at(0), at(1)]);
    assert_oracle(&body);
}

#[test]
fn calls_define_return_register() {
    let body = snippet(&["mov x0, #1", "bl Lf", "mov x1, x0", "ret", "Lf:", "ret"]);
    assert_eq!(body.defs_of(at(2), x(0)), vec![at(1)]);
    let call = body.instruction(at(1)).unwrap();
    assert!(call.defs.contains(&x(30)) && call.defs.contains(&x(0)));
    assert!((0..8).all(|r| call.uses.contains(&x(r))));
}

#[test]
fn empty_range_is_rejected() {
    let code: BTreeMap<u64, [u8; 4]> = BTreeMap::new();
    assert_eq!(build_function(&code, BASE, BASE + 8, "f"), Err(DisasmError::EmptyRange(BASE, BASE + 8)));
    let code: BTreeMap<u64, [u8; 4]> = BTreeMap::from([(BASE, [0x1f, 0x20, 0x03, 0xd5])]);
    assert_eq!(build_function(&code, BASE, BASE, "f"), Err(DisasmError::EmptyRange(BASE, BASE)));
}

#[test]
fn fixture_blocks_match_manifests() {
    for name in builtin_names() {
        let (image, _, exp) = fixture(name);
        let (bodies, warnings) = analyse_functions(&image, &CallInfo::from_image(&image), 2);
        assert!(warnings.is_empty(), "{name}: {warnings:?}");
        assert_eq!(bodies.len(), exp.functions.len(), "{name}");
        for f in &exp.functions {
            let body = &bodies[&f.address];
            assert_eq!(body.end_ea, f.end, "{name} {}", f.name);
            assert_eq!(body.instruction_count(), f.instructions, "{name} {}", f.name);
            let got: Vec<(u64, u64, Vec<u64>)> =
                body.blocks.iter().map(|b| (b.ea, b.end(), b.successors.clone())).collect();
            let want: Vec<(u64, u64, Vec<u64>)> =
                f.blocks.iter().map(|b| (b.start, b.end, b.succs.clone())).collect();
            assert_eq!(got, want, "{name} {}", f.name);
            assert_partition(body);
        }
    }
}

#[test]
fn fixture_use_def_matches_path_oracle() {
    for name in builtin_names() {
        let (image, _, _) = fixture(name);
        let (bodies, _) = analyse_functions(&image, &CallInfo::from_image(&image), 1);
        for body in bodies.values() {
            assert_oracle(body);
        }
    }
}

#[test]
fn linker_built_code_matches_path_oracle() {
    for name in ["objc.exe", "two.exe"] {
        let image = parse_macho(&common::toolchain_binary(name)).unwrap();
        let (bodies, warnings) = analyse_functions(&image, &CallInfo::from_image(&image), 1);
        assert!(warnings.is_empty());
        assert!(!bodies.is_empty());
        for body in bodies.values() {
            assert_partition(body);
            assert_oracle(body);
        }
    }
}

#[test]
fn call_sites_match_manifests() {
    for name in builtin_names() {
        let (image, model, exp) = fixture(name);
        let r = Resolver::new(&image, &model, 2);
        let mut got = BTreeMap::new();
        for body in r.bodies().values() {
            for cs in r.call_sites(body) {
                let mut t: Vec<ExpTarget> = cs.targets.iter().map(to_exp).collect();
                t.sort();
                got.insert(cs.site, (cs.caller, t));
            }
        }
        let want: BTreeMap<u64, (u64, Vec<ExpTarget>)> = exp
            .call_sites
            .iter()
            .map(|c| {
                let mut t = c.targets.clone();
                t.sort();
                (c.site, (c.caller, t))
            })
            .collect();
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn message_sends_with_constant_operands_leave_no_dispatcher_edge() {
    let (image, model, exp) = fixture("msgsend");
    let r = Resolver::new(&image, &model, 2);
    let worker_make = exp.function("+[Worker make]").unwrap().address;
    let main = r.body(exp.function("main").unwrap().address).unwrap();
    let sites = r.call_sites(main);
    assert_eq!(sites[0].targets, vec![CallTarget::Internal(worker_make)]);
    let internal = sites.iter().filter(|s| matches!(s.targets[..], [CallTarget::Internal(_)])).count();
    assert!(internal >= 3);
}

#[test]
fn backtrace_values() {
    let (image, model, exp) = fixture("msgsend");
    let r = Resolver::new(&image, &model, 2);

    // -[Cat speak] sends its own selector to itself.
    let speak = r.body(exp.function("-[Cat speak]").unwrap().address).unwrap();
    let site = speak.entry_ea + 8;
    assert_eq!(r.backtrace(speak, site, x(0)), vec![ResolvedValue::SelfRef]);
    assert_eq!(r.backtrace(speak, site, x(1)), vec![ResolvedValue::OwnSelector]);

    // Both arms of the diamond in -[Dog fetch] feed the final send.
    let fetch = r.body(exp.function("-[Dog fetch]").unwrap().address).unwrap();
    let join = fetch.blocks.last().unwrap().ea;
    let sels = r.backtrace(fetch, join, x(1));
    assert_eq!(
        sels,
        vec![ResolvedValue::ConstString("eat".into()), ResolvedValue::ConstString("speak".into())]
    );

    // The receiver of +[Worker make] comes from a class reference.
    let main = r.body(exp.function("main").unwrap().address).unwrap();
    let first_send = main.instructions().find(|i| i.is_call()).unwrap().ea;
    assert_eq!(r.backtrace(main, first_send, x(0)), vec![ResolvedValue::Class("Worker".into())]);

    // -[Cat play] gets its selector as the return value of another function.
    let play = r.body(exp.function("-[Cat play]").unwrap().address).unwrap();
    let send = play.instructions().filter(|i| i.is_call()).nth(1).unwrap().ea;
    assert_eq!(r.backtrace(play, send, x(1)), vec![ResolvedValue::ConstString("speak".into())]);

    // With no interprocedural budget the same value is unknown.
    let shallow = Resolver::new(&image, &model, 0);
    let play0 = shallow.body(play.entry_ea).unwrap();
    assert_eq!(shallow.backtrace(play0, send, x(1)), vec![ResolvedValue::Unknown]);
}

#[test]
fn backtrace_through_method_name_address() {
    let m = parse_manifest(
        r#"{
        "name": "methname",
        "imports": ["_objc_msgSend"],
        "functions": [{
            "name": "_main",
            "exported": true,
            "code": [
                "adrp x8, methname:length@PAGE",
                "add x8, x8, methname:length@PAGEOFF",
                "mov x1, x8",
                "bl _objc_msgSend ; expect: ext:objc_msgSend sel=length",
                "ret"
            ]
        }]
    }"#,
    )
    .unwrap();
    let fx = generate(&m).unwrap();
    let image = parse_macho(&fx.binary).unwrap();
    let model = objc::analyze(&image);
    let r = Resolver::new(&image, &model, 2);
    let main = r.body(fx.expected.function("main").unwrap().address).unwrap();
    let add = main.instructions().nth(1).unwrap();
    assert_eq!(add.xref, Some(fx.expected.methname["length"]));
    assert_eq!(r.backtrace(main, main.entry_ea + 12, x(1)), vec![ResolvedValue::ConstString("length".into())]);
    let sites = r.call_sites(main);
    assert_eq!(
        sites[0].targets,
        vec![CallTarget::External { name: "objc_msgSend".into(), selector: Some("length".into()), receiver: None }]
    );
}

#[test]
fn tail_calls_are_call_sites_not_successors() {
    let (image, model, exp) = fixture("msgsend");
    let r = Resolver::new(&image, &model, 2);
    let forward = r.body(exp.function("-[Worker forward]").unwrap().address).unwrap();
    assert!(forward.blocks.iter().all(|b| b.successors.is_empty()));
    assert_eq!(forward.tail_calls().count(), 1);
    let do_work = exp.function("-[Worker doWork]").unwrap().address;
    assert_eq!(r.call_sites(forward)[0].targets, vec![CallTarget::Internal(do_work)]);
}

#[test]
fn listing_round_trip() {
    let (image, _, _) = fixture("msgsend");
    let (bodies, _) = analyse_functions(&image, &CallInfo::from_image(&image), 1);
    let text = write_listing(bodies.values());
    assert!(text.starts_with("#lios-disasm v1\n"));
    let code = parse_listing(&text).unwrap();
    for body in bodies.values() {
        let mut again = build_function(&code, body.entry_ea, body.end_ea, &body.name).unwrap();
        annotate_calls(&mut again, &CallInfo::from_image(&image), Some(&image));
        compute_use_def(&mut again);
        assert_eq!(&again, body);
    }
}

#[test]
fn malformed_listings() {
    assert!(matches!(parse_listing("0x1000\t1f2003d5\tnop\n"), Err(DisasmError::BadListing { line: 1, .. })));
    let dup = "#lios-disasm v1\n# comment\n0x1000\t1f2003d5\tnop\n1000\t1f2003d5\tnop\n";
    assert!(matches!(parse_listing(dup), Err(DisasmError::BadListing { line: 4, .. })));
    assert!(matches!(
        parse_listing("#lios-disasm v1\n0x1000\t1f20\tnop\n"),
        Err(DisasmError::BadListing { line: 2, .. })
    ));
    let ok = parse_listing("#lios-disasm v1\n\n1000\t1f2003d5\n").unwrap();
    assert_eq!(ok[&0x1000], [0x1f, 0x20, 0x03, 0xd5]);
}

fn random_inst(n: usize) -> impl Strategy<Value = String> {
    let reg = 0u8..4;
    let label = move |t: usize| format!("L{}", t.min(n - 1));
    prop_oneof![
        (reg.clone(), 0i64..8).prop_map(|(r, v)| format!("mov x{r}, #{v}")),
        (reg.clone(), reg.clone()).prop_map(|(a, b)| format!("mov x{a}, x{b}")),
        (reg.clone(), reg.clone()).prop_map(|(a, b)| format!("add x{a}, x{b}, #1")),
        (reg.clone(), 0i64..3).prop_map(|(r, s)| format!("str x{r}, [sp, #{}]", 8 * s)),
        (reg.clone(), 0i64..3).prop_map(|(r, s)| format!("ldr x{r}, [sp, #{}]", 8 * s)),
        (reg.clone(), 0..n).prop_map(move |(r, t)| format!("cbz x{r}, {}", label(t))),
        (0..n).prop_map(move |t| format!("b {}", label(t))),
        Just("ret".to_string()),
        Just("nop".to_string()),
    ]
}

fn random_function() -> impl Strategy<Value = Vec<String>> {
    (2usize..32).prop_flat_map(|n| {
        (0..n).map(|_| random_inst(n)).collect::<Vec<_>>().prop_map(|insts| {
            insts
                .into_iter()
                .enumerate()
                .flat_map(|(k, i)| [format!("L{k}:"), i])
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn random_functions_match_path_oracle(src in random_function()) {
        let lines: Vec<&str> = src.iter().map(String::as_str).collect();
        let body = snippet(&lines);
        assert_partition(&body);
        let (edges, params) = path_use_def(&body);
        prop_assert_eq!(&body.use_def, &edges);
        prop_assert_eq!(&body.param_uses, &params);
        let succ_ok = body.blocks.iter().all(|b| b.successors.iter().all(|s| body.block(*s).is_some()));
        prop_assert!(succ_ok);
    }
}
