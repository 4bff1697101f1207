//! XML property lists.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use quick_xml::events::Event;
use quick_xml::Reader;

use super::{parse_date, MalformedPlist, PlistValue};

fn bad(reason: impl Into<String>) -> MalformedPlist {
    MalformedPlist(reason.into())
}

/// What a parsed element produced.
enum Item {
    Value(PlistValue),
    Key(String),
    /// The closing tag of the enclosing container.
    Close(String),
}

struct Parser<'a> {
    reader: Reader<&'a [u8]>,
}

impl<'a> Parser<'a> {
    fn event(&mut self) -> Result<Event<'a>, MalformedPlist> {
        self.reader.read_event().map_err(|e| bad(format!("XML error at byte {}: {e}", self.reader.buffer_position())))
    }

    /// Character content up to the closing tag `name`.
    fn text(&mut self, name: &str) -> Result<String, MalformedPlist> {
        let mut out = String::new();
        loop {
            match self.event()? {
                Event::Text(t) => out.push_str(&t.xml10_content()),
                Event::CData(c) => out.push_str(&c),
                Event::GeneralRef(r) => match r.resolve_char_ref() {
                    Ok(Some(c)) => out.push(c),
                    Ok(None) => out.push(match &*r.xml10_content() {
                        "lt" => '<',
                        "gt" => '>',
                        "amp" => '&',
                        "apos" => '\'',
                        "quot" => '"',
                        other => return Err(bad(format!("unknown entity &{other};"))),
                    }),
                    Err(e) => return Err(bad(e.to_string())),
                },
                Event::Comment(_) => {}
                Event::End(e) if e.name().as_ref() == name => return Ok(out),
                Event::Eof => return Err(bad(format!("unterminated <{name}>"))),
                _ => return Err(bad(format!("unexpected markup inside <{name}>"))),
            }
        }
    }

    fn item(&mut self) -> Result<Item, MalformedPlist> {
        loop {
            let (name, empty) = match self.event()? {
                Event::Start(s) => (s.name().as_ref().to_string(), false),
                Event::Empty(s) => (s.name().as_ref().to_string(), true),
                Event::End(e) => return Ok(Item::Close(e.name().as_ref().to_string())),
                Event::Text(t) if t.xml10_content().trim().is_empty() => continue,
                Event::Comment(_) | Event::Decl(_) | Event::DocType(_) | Event::PI(_) => continue,
                Event::Eof => return Err(bad("unexpected end of document")),
                _ => return Err(bad("text outside a value element")),
            };
            let text = |p: &mut Self| if empty { Ok(String::new()) } else { p.text(&name) };
            let value = match name.as_str() {
                "key" => return Ok(Item::Key(text(self)?)),
                "dict" => PlistValue::Dictionary(if empty { BTreeMap::new() } else { self.dict()? }),
                "array" => PlistValue::Array(if empty { Vec::new() } else { self.array()? }),
                "string" => PlistValue::String(text(self)?),
                "integer" => {
                    let t = text(self)?;
                    let t = t.trim();
                    let n = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
                        Some(h) => i128::from_str_radix(h, 16),
                        None => t.parse(),
                    };
                    PlistValue::Integer(n.map_err(|_| bad(format!("bad integer {t:?}")))?)
                }
                "real" => {
                    let t = text(self)?;
                    PlistValue::Real(t.trim().parse().map_err(|_| bad(format!("bad real {t:?}")))?)
                }
                "true" | "false" => {
                    if !empty && !text(self)?.trim().is_empty() {
                        return Err(bad(format!("<{name}> must be empty")));
                    }
                    PlistValue::Boolean(name == "true")
                }
                "date" => PlistValue::Date(parse_date(&text(self)?)?),
                "data" => {
                    let t: String = text(self)?.split_whitespace().collect();
                    PlistValue::Data(STANDARD.decode(t).map_err(|e| bad(format!("bad base64: {e}")))?)
                }
                other => return Err(bad(format!("unknown element <{other}>"))),
            };
            return Ok(Item::Value(value));
        }
    }

    fn value(&mut self) -> Result<PlistValue, MalformedPlist> {
        match self.item()? {
            Item::Value(v) => Ok(v),
            Item::Key(_) => Err(bad("<key> outside a dictionary")),
            Item::Close(n) => Err(bad(format!("unexpected </{n}>"))),
        }
    }

    fn dict(&mut self) -> Result<BTreeMap<String, PlistValue>, MalformedPlist> {
        let mut out = BTreeMap::new();
        loop {
            match self.item()? {
                Item::Close(n) if n == "dict" => return Ok(out),
                Item::Key(k) => {
                    let v = self.value()?;
                    if out.insert(k.clone(), v).is_some() {
                        return Err(bad(format!("duplicate key {k:?}")));
                    }
                }
                Item::Value(_) => return Err(bad("dictionary value without a key")),
                Item::Close(n) => return Err(bad(format!("unexpected </{n}> in dictionary"))),
            }
        }
    }

    fn array(&mut self) -> Result<Vec<PlistValue>, MalformedPlist> {
        let mut out = Vec::new();
        loop {
            match self.item()? {
                Item::Close(n) if n == "array" => return Ok(out),
                Item::Value(v) => out.push(v),
                Item::Key(_) => return Err(bad("<key> inside an array")),
                Item::Close(n) => return Err(bad(format!("unexpected </{n}> in array"))),
            }
        }
    }
}

pub(super) fn parse(text: &str) -> Result<PlistValue, MalformedPlist> {
    let mut p = Parser { reader: Reader::from_str(text) };
    // Either a <plist> wrapper or a bare value.
    let root = loop {
        match p.event()? {
            Event::Start(s) if s.name().as_ref() == "plist" => {
                let v = p.value()?;
                match p.item()? {
                    Item::Close(n) if n == "plist" => {}
                    _ => return Err(bad("<plist> must hold exactly one value")),
                }
                break v;
            }
            Event::Decl(_) | Event::DocType(_) | Event::Comment(_) | Event::PI(_) => {}
            Event::Text(t) if t.xml10_content().trim().is_empty() => {}
            Event::Eof => return Err(bad("empty document")),
            _ => return Err(bad("expected <plist>")),
        }
    };
    loop {
        match p.event()? {
            Event::Eof => return Ok(root),
            Event::Comment(_) => {}
            Event::Text(t) if t.xml10_content().trim().is_empty() => {}
            _ => return Err(bad("content after </plist>")),
        }
    }
}
