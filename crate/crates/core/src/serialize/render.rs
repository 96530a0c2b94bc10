use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use core::ops::Range;

use super::document::{render_value, Block, DocSection, Document};
use super::values::{classify_value, format_value, DateFrame};
use super::{EventKind, Format, Serializer};
use crate::model::{ClinicalEvent, Patient};
use crate::time::Timestamp;

/// Output text plus bookkeeping for truncation accounting.
pub(crate) struct Rendered {
    pub text: String,
    /// (byte offset just past the item, events it represents)
    pub item_ends: Vec<(usize, usize)>,
    pub sections: Vec<(DocSection, Range<usize>)>,
}

impl Rendered {
    fn new() -> Self {
        Rendered { text: String::new(), item_ends: Vec::new(), sections: Vec::new() }
    }

    fn mark_item(&mut self, n_events: usize) {
        self.item_ends.push((self.text.len(), n_events));
    }
}

pub(crate) fn tree(doc: &Document, format: Format) -> Rendered {
    let mut out = Rendered::new();
    match format {
        Format::Markdown => markdown(&mut out, &doc.root),
        Format::Json => {
            json_block(&mut out, &doc.root, 0);
            out.text.push('\n');
        }
        Format::Xml => {
            out.text.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
            xml_block(&mut out, &doc.root, 0);
        }
        Format::Yaml => yaml_block(&mut out, &doc.root, 0, false),
        Format::EventListRecentFirst | Format::EventListOldestFirst => {
            unreachable!("event lists are rendered from events, not the section tree")
        }
    }
    out
}

/// Top-level sections only, without title and header.
pub(crate) fn markdown_sections(doc: &Document) -> String {
    let mut out = Rendered::new();
    for (i, child) in doc.root.children.iter().enumerate() {
        if i > 0 {
            out.text.push('\n');
        }
        md_block(&mut out, child, 2);
    }
    out.text
}

fn markdown(out: &mut Rendered, root: &Block) {
    out.text.push_str("# ");
    out.text.push_str(&root.heading);
    out.text.push('\n');
    for item in &root.items {
        md_item(out, &item.text, item.n_events);
    }
    out.sections.push((DocSection::Header, 0..out.text.len()));
    for child in &root.children {
        out.text.push('\n');
        let start = out.text.len();
        md_block(out, child, 2);
        if let Some(section) = child.section {
            out.sections.push((section, start..out.text.len()));
        }
    }
}

fn md_item(out: &mut Rendered, text: &str, n_events: usize) {
    out.text.push_str("- ");
    out.text.push_str(text);
    out.text.push('\n');
    out.mark_item(n_events);
}

fn md_block(out: &mut Rendered, block: &Block, level: usize) {
    for _ in 0..level {
        out.text.push('#');
    }
    out.text.push(' ');
    out.text.push_str(&block.heading);
    out.text.push('\n');
    for item in &block.items {
        md_item(out, &item.text, item.n_events);
    }
    for child in &block.children {
        out.text.push('\n');
        md_block(out, child, level + 1);
    }
}

/// JSON string literal; also a valid YAML double-quoted scalar.
fn quoted(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\r' => q.push_str("\\r"),
            '\t' => q.push_str("\\t"),
            c if (c as u32) < 0x20 || c == '\u{7f}' => {
                let _ = write!(q, "\\u{:04x}", c as u32);
            }
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

fn indent(out: &mut Rendered, depth: usize) {
    for _ in 0..depth {
        out.text.push_str("  ");
    }
}

fn json_block(out: &mut Rendered, block: &Block, depth: usize) {
    out.text.push_str("{\n");
    indent(out, depth + 1);
    let _ = write!(out.text, "\"heading\": {},\n", quoted(&block.heading));
    indent(out, depth + 1);
    if block.items.is_empty() {
        out.text.push_str("\"items\": []");
    } else {
        out.text.push_str("\"items\": [\n");
        for (i, item) in block.items.iter().enumerate() {
            indent(out, depth + 2);
            out.text.push_str(&quoted(&item.text));
            out.mark_item(item.n_events);
            if i + 1 < block.items.len() {
                out.text.push(',');
            }
            out.text.push('\n');
        }
        indent(out, depth + 1);
        out.text.push(']');
    }
    if !block.children.is_empty() {
        out.text.push_str(",\n");
        indent(out, depth + 1);
        out.text.push_str("\"sections\": [\n");
        for (i, child) in block.children.iter().enumerate() {
            indent(out, depth + 2);
            json_block(out, child, depth + 2);
            if i + 1 < block.children.len() {
                out.text.push(',');
            }
            out.text.push('\n');
        }
        indent(out, depth + 1);
        out.text.push(']');
    }
    out.text.push('\n');
    indent(out, depth);
    out.text.push('}');
}

fn xml_escape(s: &str) -> String {
    let mut e = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => e.push_str("&amp;"),
            '<' => e.push_str("&lt;"),
            '>' => e.push_str("&gt;"),
            '"' => e.push_str("&quot;"),
            '\'' => e.push_str("&apos;"),
            // characters XML 1.0 cannot carry at all
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => e.push('\u{fffd}'),
            c => e.push(c),
        }
    }
    e
}

fn xml_block(out: &mut Rendered, block: &Block, depth: usize) {
    indent(out, depth);
    let _ = writeln!(out.text, "<section heading=\"{}\">", xml_escape(&block.heading));
    for item in &block.items {
        indent(out, depth + 1);
        let _ = write!(out.text, "<item>{}</item>", xml_escape(&item.text));
        out.mark_item(item.n_events);
        out.text.push('\n');
    }
    for child in &block.children {
        xml_block(out, child, depth + 1);
    }
    indent(out, depth);
    out.text.push_str("</section>\n");
}

fn yaml_block(out: &mut Rendered, block: &Block, depth: usize, list_entry: bool) {
    // first key of a list entry shares the "- " line
    if !list_entry {
        indent(out, depth);
    }
    let _ = writeln!(out.text, "heading: {}", quoted(&block.heading));
    indent(out, depth);
    if block.items.is_empty() {
        out.text.push_str("items: []\n");
    } else {
        out.text.push_str("items:\n");
        for item in &block.items {
            indent(out, depth + 1);
            out.text.push_str("- ");
            out.text.push_str(&quoted(&item.text));
            out.mark_item(item.n_events);
            out.text.push('\n');
        }
    }
    if !block.children.is_empty() {
        indent(out, depth);
        out.text.push_str("sections:\n");
        for child in &block.children {
            indent(out, depth + 1);
            out.text.push_str("- ");
            yaml_block(out, child, depth + 2, true);
        }
    }
}

/// One line per visible event, oldest or newest first.
pub(crate) fn event_list(ser: &Serializer<'_>, patient: &Patient, cutoff: Timestamp) -> Rendered {
    let frame = DateFrame::new(cutoff, &ser.config.reference_date);
    let mut lines: Vec<String> = ser
        .visible_events(patient, cutoff)
        .into_iter()
        .filter_map(|e| event_line(ser, e, &frame))
        .collect();
    if ser.config.format == Format::EventListRecentFirst {
        lines.reverse();
    }
    let mut out = Rendered::new();
    for line in lines {
        out.text.push_str(&line);
        out.text.push('\n');
        out.mark_item(1);
    }
    out
}

fn event_line(ser: &Serializer<'_>, e: &ClinicalEvent, frame: &DateFrame) -> Option<String> {
    let kind = ser.kind_of(e);
    let component = kind.component(ser.concepts)?;
    if !ser.config.components.contains(&component) {
        return None;
    }
    let body = match kind {
        EventKind::Concept(i) => {
            let spec = &ser.concepts.specs()[i];
            match e.value.as_ref().and_then(|v| v.as_f64()) {
                Some(v) => {
                    let class = classify_value(spec, v)?;
                    match class.label() {
                        Some(label) => format!("{}: {} ({label})", spec.concept_name, format_value(spec, v)),
                        None => format!("{}: {}", spec.concept_name, format_value(spec, v)),
                    }
                }
                None => spec.concept_name.clone(),
            }
        }
        _ => {
            let mut text = ser.describe(e);
            if let Some(v) = render_value(e) {
                text.push_str(": ");
                text.push_str(&v);
            }
            text
        }
    };
    Some(if ser.config.timestamps_in_event_list {
        format!("{}: {body}", frame.render(e.start).ok()?)
    } else {
        body
    })
}
