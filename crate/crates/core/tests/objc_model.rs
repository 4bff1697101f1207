use std::collections::BTreeMap;

use lios_core::macho::parse_macho;
use lios_core::objc::{self, ClassLink, ObjcModel};
use lios_fixturegen::{builtin, builtin_names, generate, Expected};

mod common;
use common::{check_classes, check_protocols};

fn load(name: &str) -> (ObjcModel, Expected) {
    let fx = generate(&builtin(name).unwrap()).unwrap();
    let image = parse_macho(&fx.binary).unwrap();
    (objc::analyze(&image), fx.expected)
}

#[test]
fn every_fixture_matches_its_manifest() {
    for name in builtin_names() {
        let (model, exp) = load(name);
        check_classes(&model, &exp);
        check_protocols(&model, &exp);
        let selrefs: BTreeMap<String, Vec<u64>> = model
            .selectors
            .by_name
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().copied().collect()))
            .collect();
        let mut want = exp.selrefs.clone();
        want.values_mut().for_each(|v| v.sort_unstable());
        assert_eq!(selrefs, want, "{name}: selrefs");
        let dropped: Vec<(u64, u64)> = model
            .dropped_superclass_edges
            .iter()
            .map(|(a, b)| (model.classes[*a].address, model.classes[*b].address))
            .collect();
        assert_eq!(dropped, exp.dropped_superclass, "{name}: dropped superclass edges");
    }
}

#[test]
fn plain_binary_has_no_metadata() {
    let (model, _) = load("plain");
    assert!(model.is_empty());
}

#[test]
fn single_class_on_external_root() {
    let (model, _) = load("external_root");
    let single = model.class_named("Single", false).unwrap();
    let root = model.superclass_of(single).unwrap();
    assert_eq!(model.classes[root].name, "NSObject");
    assert!(model.classes[root].is_external);
    assert!(model.root_checks.is_empty());
    assert_eq!(model.selectors.by_name["init"].len(), 2);
}

#[test]
fn in_image_root_closes_metaclass_cycle() {
    for name in ["hierarchy", "root_cycle"] {
        let (model, _) = load(name);
        assert!(!model.root_checks.is_empty(), "{name}");
        assert!(model.root_checks.iter().all(|c| c.holds()), "{name}: {:?}", model.root_checks);
    }
    let (model, _) = load("root_cycle");
    // A ⊂ B plus both meta-classes.
    assert_eq!(model.classes.iter().filter(|c| !c.is_external).count(), 4);
    let a = model.class_named("A", false).unwrap();
    let b = model.class_named("B", false).unwrap();
    assert_eq!(model.classes[a].superclass_ref, ClassLink::Local(model.classes[b].address));
    let bm = model.isa_of(b).unwrap();
    assert_eq!(model.isa_of(bm), Some(bm));
    assert_eq!(model.superclass_of(bm), Some(b));
}

#[test]
fn superclass_cycle_is_reported_and_broken() {
    let (model, _) = load("superclass_cycle");
    assert_eq!(model.dropped_superclass_edges.len(), 2);
    assert!(model.warnings.iter().any(|w| w.contains("cyclic")));
    let a = model.class_named("A", false).unwrap();
    assert_eq!(model.lookup_method(a, "missing"), None);
}

#[test]
fn dangling_classlist_slot_is_isolated() {
    let (model, exp) = load("dangling");
    let malformed: Vec<_> = model.classes.iter().filter(|c| c.malformed).collect();
    assert_eq!(malformed.len(), 1);
    assert!(malformed[0].name.starts_with("malformed@"));
    assert_eq!(model.classes.iter().filter(|c| !c.is_external && !c.malformed).count(), exp.classes.len());
}

#[test]
fn inherited_method_lookup() {
    let (model, exp) = load("msgsend");
    let dog = model.class_named("Dog", false).unwrap();
    let (owner, m) = model.lookup_method(dog, "eat").unwrap();
    assert_eq!(model.classes[owner].name, "Animal");
    assert_eq!(m.impl_address, Some(exp.function("-[Animal eat]").unwrap().address));
    let (owner, _) = model.lookup_method(dog, "speak").unwrap();
    assert_eq!(model.classes[owner].name, "Dog");
}

#[test]
fn every_impl_is_a_function_start() {
    for name in builtin_names() {
        let fx = generate(&builtin(name).unwrap()).unwrap();
        let image = parse_macho(&fx.binary).unwrap();
        let model = objc::analyze(&image);
        for a in model.impl_addresses() {
            assert!(image.function_starts.contains(&a), "{name}: {a:#x}");
            assert_eq!(model.methods_at(a).len(), 1, "{name}: {a:#x} implements one method");
        }
    }
}

#[test]
fn model_is_deterministic() {
    let fx = generate(&builtin("hierarchy").unwrap()).unwrap();
    let image = parse_macho(&fx.binary).unwrap();
    let a = objc::analyze(&image);
    let b = objc::analyze(&image);
    assert_eq!(a.classes, b.classes);
    assert_eq!(a.protocols, b.protocols);
}

#[test]
fn linker_built_objc_binary() {
    let image = parse_macho(&common::toolchain_binary("objc.exe")).unwrap();
    let map = common::LinkMap::load("objc.map");
    let model = objc::analyze(&image);
    assert!(model.warnings.is_empty(), "{:?}", model.warnings);
    let root = model.class_named("Root", false).unwrap();
    let dog = model.class_named("Dog", false).unwrap();
    assert_eq!(model.classes[root].address, map.symbol("_OBJC_CLASS_$_Root"));
    assert_eq!(model.classes[dog].address, map.symbol("_OBJC_CLASS_$_Dog"));
    assert_eq!(model.superclass_of(dog), Some(root));
    assert_eq!(model.root_checks.len(), 1);
    assert!(model.root_checks[0].holds());
    let dog_meta = model.isa_of(dog).unwrap();
    assert_eq!(model.classes[dog_meta].address, map.symbol("_OBJC_METACLASS_$_Dog"));
    assert_eq!(model.isa_of(dog_meta), model.isa_of(root));

    // Every method implementation lands on the linker's symbol for it.
    let mut impls = 0;
    for c in &model.classes {
        for m in &c.methods {
            let sig = c.method_signature(&m.selector);
            assert_eq!(m.impl_address, Some(map.symbol(&sig)), "{sig}");
            impls += 1;
        }
    }
    assert_eq!(impls, 6);
    let d = &model.classes[dog];
    assert_eq!(d.ivars.len(), 1);
    assert_eq!((d.ivars[0].name.as_str(), d.ivars[0].type_encoding.as_str()), ("legs", "i"));
    assert_eq!(d.properties.len(), 1);
    assert_eq!(d.properties[0].name, "legs");
    assert_eq!(model.adopted_protocols(dog).into_iter().collect::<Vec<_>>(), vec!["Speaker".to_string()]);
    let speaker = &model.protocols[0];
    assert_eq!(speaker.required_methods.iter().map(|m| m.selector.as_str()).collect::<Vec<_>>(), ["speak"]);
    assert_eq!(speaker.optional_methods.iter().map(|m| m.selector.as_str()).collect::<Vec<_>>(), ["whisper"]);
    assert!(model.selectors.by_name.contains_key("fetch"));
    assert!(model.selectors.by_name.contains_key("speak"));
}
