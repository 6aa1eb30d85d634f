//! The six-field structured output: parsing with value spans, canonical
//! serialization and de-quantization.
//!
//! A response is a JSON object with two text fields (`answer`,
//! `description`) and four geometric fields whose values are arrays of
//! integer quantization bins:
//!
//! ```text
//! {"answer": "chair", "description": "...", "bbox2d": [u0, v0, u1, v1],
//!  "bbox3d": [x0, y0, z0, x1, y1, z1], "kpts2d": [[u, v], ...],
//!  "kpts3d": [[x, y, z], ...]}
//! ```
//!
//! Parsing never fails; every field gets a [`FieldStatus`]. Spans are in
//! characters (Unicode scalar values), not bytes, and cover only the
//! bracketed value payload of a geometric field.

mod json;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box2D, Box3D, KeypointSet, QuantRange, QuantRanges};
use json::{Json, Reader, Spanned};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("incomplete fields: {0}")]
    IncompleteFields(String),
}

/// The four geometric fields, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeomField {
    Bbox2d,
    Bbox3d,
    Kpts2d,
    Kpts3d,
}

impl GeomField {
    pub const ALL: [GeomField; 4] = [GeomField::Bbox2d, GeomField::Bbox3d, GeomField::Kpts2d, GeomField::Kpts3d];

    pub fn name(self) -> &'static str {
        match self {
            GeomField::Bbox2d => "bbox2d",
            GeomField::Bbox3d => "bbox3d",
            GeomField::Kpts2d => "kpts2d",
            GeomField::Kpts3d => "kpts3d",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Self> {
        GeomField::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldStatus {
    Ok,
    Missing,
    Duplicated,
    Malformed,
}

/// Half-open character range into the response text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        start < self.end && self.start < end
    }
}

/// One parsed field. `span` is present iff `status` is [`FieldStatus::Ok`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field<T> {
    pub value: Option<T>,
    pub span: Option<CharSpan>,
    pub status: FieldStatus,
}

impl<T> Field<T> {
    fn failed(status: FieldStatus) -> Self {
        Field { value: None, span: None, status }
    }

    pub fn is_ok(&self) -> bool {
        self.status == FieldStatus::Ok
    }
}

pub type Bins2 = [u32; 2];
pub type Bins3 = [u32; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedOutput {
    pub answer: Field<String>,
    pub description: Field<String>,
    pub bbox2d: Field<[u32; 4]>,
    pub bbox3d: Field<[u32; 6]>,
    pub kpts2d: Field<Vec<Bins2>>,
    pub kpts3d: Field<Vec<Bins3>>,
    /// Length of the parsed text in characters.
    pub text_len: usize,
}

impl ParsedOutput {
    pub fn status(&self, f: GeomField) -> FieldStatus {
        match f {
            GeomField::Bbox2d => self.bbox2d.status,
            GeomField::Bbox3d => self.bbox3d.status,
            GeomField::Kpts2d => self.kpts2d.status,
            GeomField::Kpts3d => self.kpts3d.status,
        }
    }

    pub fn span(&self, f: GeomField) -> Option<CharSpan> {
        match f {
            GeomField::Bbox2d => self.bbox2d.span,
            GeomField::Bbox3d => self.bbox3d.span,
            GeomField::Kpts2d => self.kpts2d.span,
            GeomField::Kpts3d => self.kpts3d.span,
        }
    }

    pub fn statuses(&self) -> [FieldStatus; 4] {
        GeomField::ALL.map(|f| self.status(f))
    }

    /// All six values, or an error naming the first missing one.
    pub fn complete_fields(&self) -> Result<CanonicalFields, SchemaError> {
        fn take<T: Clone>(f: &Field<T>, name: &str) -> Result<T, SchemaError> {
            f.value.clone().ok_or_else(|| SchemaError::IncompleteFields(name.to_string()))
        }
        Ok(CanonicalFields {
            answer: take(&self.answer, "answer")?,
            description: take(&self.description, "description")?,
            bbox2d: take(&self.bbox2d, "bbox2d")?,
            bbox3d: take(&self.bbox3d, "bbox3d")?,
            kpts2d: take(&self.kpts2d, "kpts2d")?,
            kpts3d: take(&self.kpts3d, "kpts3d")?,
        })
    }

    fn all_failed(text_len: usize) -> Self {
        ParsedOutput {
            answer: Field::failed(FieldStatus::Malformed),
            description: Field::failed(FieldStatus::Malformed),
            bbox2d: Field::failed(FieldStatus::Malformed),
            bbox3d: Field::failed(FieldStatus::Malformed),
            kpts2d: Field::failed(FieldStatus::Malformed),
            kpts3d: Field::failed(FieldStatus::Malformed),
            text_len,
        }
    }
}

/// A generated response, optionally with the token pieces it decodes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pieces: Option<Vec<String>>,
}

impl RawResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        RawResponse { text: text.into(), pieces: None }
    }
}

/// Byte offset to character offset, for the spans reported to callers.
struct CharIndex<'a> {
    text: &'a str,
    ascii: bool,
}

impl<'a> CharIndex<'a> {
    fn new(text: &'a str) -> Self {
        CharIndex { text, ascii: text.is_ascii() }
    }

    fn chars_before(&self, byte: usize) -> usize {
        if self.ascii {
            byte
        } else {
            self.text[..byte].chars().count()
        }
    }

    fn span(&self, v: &Spanned) -> CharSpan {
        CharSpan { start: self.chars_before(v.start), end: self.chars_before(v.end) }
    }
}

fn as_bin(v: &Spanned) -> Option<u32> {
    match &v.value {
        Json::Number(raw) if raw.bytes().all(|b| b.is_ascii_digit()) => raw.parse().ok(),
        _ => None,
    }
}

fn as_bins<const N: usize>(v: &Spanned) -> Option<[u32; N]> {
    let Json::Array(items) = &v.value else { return None };
    if items.len() != N {
        return None;
    }
    let mut out = [0u32; N];
    for (slot, item) in out.iter_mut().zip(items) {
        *slot = as_bin(item)?;
    }
    Some(out)
}

fn as_bin_list<const N: usize>(v: &Spanned) -> Option<Vec<[u32; N]>> {
    let Json::Array(items) = &v.value else { return None };
    if items.is_empty() {
        return None;
    }
    items.iter().map(as_bins::<N>).collect()
}

fn as_text(v: &Spanned) -> Option<String> {
    match &v.value {
        Json::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn extract<T>(
    entries: &[(String, Spanned)],
    key: &str,
    index: &CharIndex<'_>,
    decode: impl Fn(&Spanned) -> Option<T>,
) -> Field<T> {
    let mut hits = entries.iter().filter(|(k, _)| k == key);
    let Some((_, first)) = hits.next() else {
        return Field::failed(FieldStatus::Missing);
    };
    if hits.next().is_some() {
        return Field::failed(FieldStatus::Duplicated);
    }
    match decode(first) {
        Some(value) => Field { value: Some(value), span: Some(index.span(first)), status: FieldStatus::Ok },
        None => Field::failed(FieldStatus::Malformed),
    }
}

/// Best-effort parse of a response. Text before the first `{` and after the
/// matching `}` is ignored; if no JSON object can be read there, every field
/// is [`FieldStatus::Malformed`].
pub fn parse_structured_output(raw: &RawResponse) -> ParsedOutput {
    parse_text(&raw.text)
}

pub fn parse_text(text: &str) -> ParsedOutput {
    let index = CharIndex::new(text);
    let text_len = index.chars_before(text.len());
    let Some(open) = text.find('{') else {
        return ParsedOutput::all_failed(text_len);
    };
    let Ok(root) = Reader::value_at(text, open) else {
        return ParsedOutput::all_failed(text_len);
    };
    let Json::Object(entries) = &root.value else {
        return ParsedOutput::all_failed(text_len);
    };
    ParsedOutput {
        answer: extract(entries, "answer", &index, as_text),
        description: extract(entries, "description", &index, as_text),
        bbox2d: extract(entries, "bbox2d", &index, as_bins::<4>),
        bbox3d: extract(entries, "bbox3d", &index, as_bins::<6>),
        kpts2d: extract(entries, "kpts2d", &index, as_bin_list::<2>),
        kpts3d: extract(entries, "kpts3d", &index, as_bin_list::<3>),
        text_len,
    }
}

/// A complete set of field values, ready to serialize.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalFields {
    pub answer: String,
    pub description: String,
    pub bbox2d: [u32; 4],
    pub bbox3d: [u32; 6],
    pub kpts2d: Vec<Bins2>,
    pub kpts3d: Vec<Bins3>,
}

/// What produced a piece of canonical text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceRole {
    Template,
    Answer,
    Description,
    /// The `index`-th coordinate of a geometric field, flattened row-major.
    Coord {
        field: GeomField,
        index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    pub role: PieceRole,
}

/// Character spans of the four geometric payloads, indexed by
/// [`GeomField::index`].
pub type SpanTable = [CharSpan; 4];

struct PieceWriter {
    pieces: Vec<Piece>,
    pending: String,
}

impl PieceWriter {
    fn template(&mut self, s: &str) {
        self.pending.push_str(s);
    }

    fn value(&mut self, text: String, role: PieceRole) {
        if !self.pending.is_empty() {
            let t = std::mem::take(&mut self.pending);
            self.pieces.push(Piece { text: t, role: PieceRole::Template });
        }
        self.pieces.push(Piece { text, role });
    }

    fn coords(&mut self, field: GeomField, next: &mut usize, values: &[u32]) {
        self.template("[");
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.template(", ");
            }
            self.value(v.to_string(), PieceRole::Coord { field, index: *next });
            *next += 1;
        }
        self.template("]");
    }

    fn finish(mut self) -> Vec<Piece> {
        if !self.pending.is_empty() {
            self.pieces.push(Piece { text: self.pending, role: PieceRole::Template });
        }
        self.pieces
    }
}

fn escaped(s: &str) -> String {
    let quoted = serde_json::to_string(s).expect("string serializes");
    quoted[1..quoted.len() - 1].to_string()
}

/// Canonical text split into pieces: one piece per value (answer,
/// description, each coordinate) and merged template text between them.
pub fn canonical_pieces(fields: &CanonicalFields) -> Vec<Piece> {
    let mut w = PieceWriter { pieces: Vec::new(), pending: String::new() };
    w.template("{\"answer\": \"");
    w.value(escaped(&fields.answer), PieceRole::Answer);
    w.template("\", \"description\": \"");
    w.value(escaped(&fields.description), PieceRole::Description);
    w.template("\", \"bbox2d\": ");
    let mut next = 0;
    w.coords(GeomField::Bbox2d, &mut next, &fields.bbox2d);
    w.template(", \"bbox3d\": ");
    next = 0;
    w.coords(GeomField::Bbox3d, &mut next, &fields.bbox3d);
    for (field, rows) in [
        (GeomField::Kpts2d, fields.kpts2d.iter().map(|r| r.as_slice()).collect::<Vec<_>>()),
        (GeomField::Kpts3d, fields.kpts3d.iter().map(|r| r.as_slice()).collect::<Vec<_>>()),
    ] {
        w.template(&format!(", \"{}\": [", field.name()));
        next = 0;
        for (i, row) in rows.iter().enumerate() {
            if i > 0 {
                w.template(", ");
            }
            w.coords(field, &mut next, row);
        }
        w.template("]");
    }
    w.template("}");
    w.finish()
}

/// Deterministic text for a complete field set, plus the span of each
/// geometric payload.
pub fn serialize_fields(fields: &CanonicalFields) -> (RawResponse, SpanTable) {
    let pieces = canonical_pieces(fields);
    let text: String = pieces.iter().map(|p| p.text.as_str()).collect();
    let parsed = parse_text(&text);
    let spans = GeomField::ALL.map(|f| parsed.span(f).expect("canonical text parses"));
    let pieces = pieces.into_iter().map(|p| p.text).collect();
    (RawResponse { text, pieces: Some(pieces) }, spans)
}

pub fn serialize_canonical(parsed: &ParsedOutput) -> Result<(RawResponse, SpanTable), SchemaError> {
    Ok(serialize_fields(&parsed.complete_fields()?))
}

/// Continuous geometry recovered from bins. A field is `None` when its parse
/// failed or a bin was out of range.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeometricValues {
    pub bbox2d: Option<Box2D>,
    pub bbox3d: Option<Box3D>,
    pub kpts2d: Option<KeypointSet>,
    pub kpts3d: Option<KeypointSet>,
    /// Fields whose min/max coordinates had to be swapped.
    pub swapped: Vec<GeomField>,
    /// Fields rejected because a bin exceeded its range.
    pub out_of_range: Vec<GeomField>,
}

impl GeometricValues {
    pub fn is_present(&self, f: GeomField) -> bool {
        match f {
            GeomField::Bbox2d => self.bbox2d.is_some(),
            GeomField::Bbox3d => self.bbox3d.is_some(),
            GeomField::Kpts2d => self.kpts2d.is_some(),
            GeomField::Kpts3d => self.kpts3d.is_some(),
        }
    }
}

fn deq<const N: usize>(bins: &[u32; N], ranges: &[QuantRange; N]) -> Option<[f64; N]> {
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = ranges[i].dequantize(bins[i]).ok()?;
    }
    Some(out)
}

/// Orders each (min, max) pair; returns whether anything moved.
fn order_pairs<const N: usize>(v: &mut [f64; N]) -> bool {
    let half = N / 2;
    let mut swapped = false;
    for i in 0..half {
        if v[i] > v[i + half] {
            v.swap(i, i + half);
            swapped = true;
        }
    }
    swapped
}

pub fn dequantize_fields(parsed: &ParsedOutput, ranges: &QuantRanges) -> GeometricValues {
    let [u, v] = ranges.planar();
    let [x, y, z] = ranges.spatial();
    let mut out = GeometricValues::default();

    if let Some(bins) = &parsed.bbox2d.value {
        match deq(bins, &[u, v, u, v]) {
            Some(mut c) => {
                if order_pairs(&mut c) {
                    out.swapped.push(GeomField::Bbox2d);
                }
                out.bbox2d = Box2D::from_array(c).ok();
            }
            None => out.out_of_range.push(GeomField::Bbox2d),
        }
    }
    if let Some(bins) = &parsed.bbox3d.value {
        match deq(bins, &[x, y, z, x, y, z]) {
            Some(mut c) => {
                if order_pairs(&mut c) {
                    out.swapped.push(GeomField::Bbox3d);
                }
                out.bbox3d = Box3D::from_array(c).ok();
            }
            None => out.out_of_range.push(GeomField::Bbox3d),
        }
    }
    if let Some(rows) = &parsed.kpts2d.value {
        match rows.iter().map(|r| deq(r, &[u, v])).collect::<Option<Vec<_>>>() {
            Some(pts) => out.kpts2d = Some(KeypointSet::Planar(pts)),
            None => out.out_of_range.push(GeomField::Kpts2d),
        }
    }
    if let Some(rows) = &parsed.kpts3d.value {
        match rows.iter().map(|r| deq(r, &[x, y, z])).collect::<Option<Vec<_>>>() {
            Some(pts) => out.kpts3d = Some(KeypointSet::Spatial(pts)),
            None => out.out_of_range.push(GeomField::Kpts3d),
        }
    }
    out
}

/// Quantizes continuous geometry into a complete field set.
pub fn quantize_fields(
    answer: &str,
    description: &str,
    bbox2d: &Box2D,
    bbox3d: &Box3D,
    kpts2d: &[[f64; 2]],
    kpts3d: &[[f64; 3]],
    ranges: &QuantRanges,
) -> CanonicalFields {
    let [u, v] = ranges.planar();
    let [x, y, z] = ranges.spatial();
    let b2 = bbox2d.as_array();
    let b3 = bbox3d.as_array();
    CanonicalFields {
        answer: answer.to_string(),
        description: description.to_string(),
        bbox2d: [u.quantize(b2[0]), v.quantize(b2[1]), u.quantize(b2[2]), v.quantize(b2[3])],
        bbox3d: [
            x.quantize(b3[0]),
            y.quantize(b3[1]),
            z.quantize(b3[2]),
            x.quantize(b3[3]),
            y.quantize(b3[4]),
            z.quantize(b3[5]),
        ],
        kpts2d: kpts2d.iter().map(|p| [u.quantize(p[0]), v.quantize(p[1])]).collect(),
        kpts3d: kpts3d.iter().map(|p| [x.quantize(p[0]), y.quantize(p[1]), z.quantize(p[2])]).collect(),
    }
}
