//! Text rendering of the Objective-C class hierarchy.

use std::fmt::Write;

use lios_core::objc::ObjcModel;

pub fn render(model: &ObjcModel) -> String {
    let mut s = String::new();
    for (i, c) in model.classes.iter().enumerate() {
        let kind = match (c.is_metaclass, c.is_external) {
            (true, true) => "external metaclass",
            (true, false) => "metaclass",
            (false, true) => "external class",
            (false, false) => "class",
        };
        let sup = model.superclass_of(i).map(|j| model.classes[j].name.as_str()).unwrap_or("-");
        let isa = model.isa_of(i).map(|j| {
            let k = &model.classes[j];
            format!("{}{}", if k.is_metaclass { "meta " } else { "" }, k.name)
        });
        let _ = write!(s, "{kind} {} @ {:#x} : {sup}", c.name, c.address);
        if let Some(isa) = isa {
            let _ = write!(s, " isa {isa}");
        }
        if c.malformed {
            s.push_str(" (malformed)");
        }
        s.push('\n');
        if !c.is_metaclass {
            let adopted = model.adopted_protocols(i);
            if !adopted.is_empty() {
                let _ = writeln!(s, "  adopts {}", adopted.into_iter().collect::<Vec<_>>().join(", "));
            }
        }
        for m in &c.methods {
            match m.impl_address {
                Some(a) => { let _ = writeln!(s, "  {} @ {a:#x}", c.method_signature(&m.selector)); }
                None => { let _ = writeln!(s, "  {}", c.method_signature(&m.selector)); }
            }
        }
        for iv in &c.ivars {
            let _ = writeln!(s, "  ivar {} {} +{}", iv.name, iv.type_encoding, iv.offset);
        }
        for p in &c.properties {
            let _ = writeln!(s, "  property {} {}", p.name, p.attributes);
        }
    }
    for p in &model.protocols {
        let _ = writeln!(s, "protocol {} @ {:#x}", p.name, p.address);
        for m in &p.required_methods {
            let _ = writeln!(s, "  required {}", m.selector);
        }
        for m in &p.optional_methods {
            let _ = writeln!(s, "  optional {}", m.selector);
        }
    }
    s
}
