//! The unified action space and its surface syntax.
//!
//! Every action a policy can emit is one of thirteen verbs written as a
//! call with keyword arguments:
//!
//! ```text
//! Click(box=(512, 384))
//! Scroll(start=(100, 800), end=(100, 200), direction='up')
//! Type(content='hello')
//! ```
//!
//! Coordinates are absolute integer pixels of the source screenshot. String
//! arguments accept single or double quotes; the canonical form produced by
//! [`Action`]'s `Display` impl always uses single quotes with backslash
//! escapes, so `parse_action(&a.to_string()) == Ok(a)` for every valid
//! action. See `docs/action-grammar.md` for the full grammar.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::geometry::{Point, ScreenSize};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty action text")]
    EmptyInput,
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("malformed parameters for {kind}: {reason}")]
    MalformedParams { kind: ActionKind, reason: String },
    #[error("syntax error at byte {pos}: {reason}")]
    Syntax { pos: usize, reason: String },
    #[error("no <action> block in model output")]
    MissingActionTag,
    #[error("{kind} point {point} lies outside the {width}x{height} screen")]
    OutOfScreen {
        kind: ActionKind,
        point: Point,
        width: u32,
        height: u32,
    },
}

/// Swipe direction of a scroll.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    /// Dominant-axis direction of the finger displacement `start -> end`.
    /// `None` when the two points coincide.
    pub fn of_displacement(start: Point, end: Point) -> Option<Self> {
        let dx = i64::from(end.x) - i64::from(start.x);
        let dy = i64::from(end.y) - i64::from(start.y);
        if dx == 0 && dy == 0 {
            return None;
        }
        Some(if dy.abs() >= dx.abs() {
            if dy < 0 {
                Direction::Up
            } else {
                Direction::Down
            }
        } else if dx < 0 {
            Direction::Left
        } else {
            Direction::Right
        })
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown direction `{0}`")]
pub struct UnknownDirection(pub String);

impl FromStr for Direction {
    type Err = UnknownDirection;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            _ => Err(UnknownDirection(s.to_string())),
        }
    }
}

/// The thirteen action verbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Click,
    Drag,
    Scroll,
    Type,
    Launch,
    Wait,
    Finished,
    CallUser,
    LongPress,
    PressBack,
    PressHome,
    PressEnter,
    PressRecent,
}

impl ActionKind {
    pub const ALL: [ActionKind; 13] = [
        ActionKind::Click,
        ActionKind::Drag,
        ActionKind::Scroll,
        ActionKind::Type,
        ActionKind::Launch,
        ActionKind::Wait,
        ActionKind::Finished,
        ActionKind::CallUser,
        ActionKind::LongPress,
        ActionKind::PressBack,
        ActionKind::PressHome,
        ActionKind::PressEnter,
        ActionKind::PressRecent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::Click => "Click",
            ActionKind::Drag => "Drag",
            ActionKind::Scroll => "Scroll",
            ActionKind::Type => "Type",
            ActionKind::Launch => "Launch",
            ActionKind::Wait => "Wait",
            ActionKind::Finished => "Finished",
            ActionKind::CallUser => "CallUser",
            ActionKind::LongPress => "LongPress",
            ActionKind::PressBack => "PressBack",
            ActionKind::PressHome => "PressHome",
            ActionKind::PressEnter => "PressEnter",
            ActionKind::PressRecent => "PressRecent",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    /// Kinds that carry a free-text parameter.
    pub fn is_text_bearing(self) -> bool {
        matches!(
            self,
            ActionKind::Type | ActionKind::Launch | ActionKind::Finished | ActionKind::CallUser
        )
    }

    pub fn is_point_targeting(self) -> bool {
        matches!(self, ActionKind::Click | ActionKind::LongPress)
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::from_name(s.trim()).ok_or_else(|| ParseError::UnknownAction(s.to_string()))
    }
}

/// Start and end of a drag or scroll gesture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Endpoints {
    pub start: Point,
    pub end: Point,
}

/// One action of the unified action space.
///
/// A `Scroll` may lack endpoints: some sources only record a direction.
/// Such scrolls serialize as `Scroll(direction='up')`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Click(Point),
    Drag(Endpoints),
    Scroll {
        endpoints: Option<Endpoints>,
        direction: Direction,
    },
    Type(String),
    Launch(String),
    Wait,
    Finished(String),
    CallUser(String),
    LongPress(Point),
    PressBack,
    PressHome,
    PressEnter,
    PressRecent,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click(_) => ActionKind::Click,
            Action::Drag(_) => ActionKind::Drag,
            Action::Scroll { .. } => ActionKind::Scroll,
            Action::Type(_) => ActionKind::Type,
            Action::Launch(_) => ActionKind::Launch,
            Action::Wait => ActionKind::Wait,
            Action::Finished(_) => ActionKind::Finished,
            Action::CallUser(_) => ActionKind::CallUser,
            Action::LongPress(_) => ActionKind::LongPress,
            Action::PressBack => ActionKind::PressBack,
            Action::PressHome => ActionKind::PressHome,
            Action::PressEnter => ActionKind::PressEnter,
            Action::PressRecent => ActionKind::PressRecent,
        }
    }

    pub fn scroll(start: Point, end: Point, direction: Direction) -> Self {
        Action::Scroll {
            endpoints: Some(Endpoints { start, end }),
            direction,
        }
    }

    pub fn drag(start: Point, end: Point) -> Self {
        Action::Drag(Endpoints { start, end })
    }

    /// Text parameter of text-bearing kinds.
    pub fn text(&self) -> Option<&str> {
        match self {
            Action::Type(s) | Action::Launch(s) | Action::Finished(s) | Action::CallUser(s) => {
                Some(s)
            }
            _ => None,
        }
    }

    /// The single target point of `Click`/`LongPress`.
    pub fn target(&self) -> Option<Point> {
        match self {
            Action::Click(p) | Action::LongPress(p) => Some(*p),
            _ => None,
        }
    }

    pub fn endpoints(&self) -> Option<Endpoints> {
        match self {
            Action::Drag(e) => Some(*e),
            Action::Scroll { endpoints, .. } => *endpoints,
            _ => None,
        }
    }

    pub fn points(&self) -> Vec<Point> {
        if let Some(p) = self.target() {
            return vec![p];
        }
        match self.endpoints() {
            Some(e) => vec![e.start, e.end],
            None => Vec::new(),
        }
    }

    /// Checks every coordinate against the screenshot bounds.
    pub fn validate_on(&self, screen: ScreenSize) -> Result<(), ParseError> {
        for point in self.points() {
            if !point.within(screen) {
                return Err(ParseError::OutOfScreen {
                    kind: self.kind(),
                    point,
                    width: screen.width,
                    height: screen.height,
                });
            }
        }
        Ok(())
    }
}

fn write_quoted(out: &mut String, s: &str) {
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        out.push_str(self.kind().name());
        out.push('(');
        match self {
            Action::Click(p) | Action::LongPress(p) => {
                let _ = write!(out, "box={p}");
            }
            Action::Drag(e) => {
                let _ = write!(out, "start={}, end={}", e.start, e.end);
            }
            Action::Scroll {
                endpoints,
                direction,
            } => {
                if let Some(e) = endpoints {
                    let _ = write!(out, "start={}, end={}, ", e.start, e.end);
                }
                out.push_str("direction=");
                write_quoted(&mut out, direction.as_str());
            }
            Action::Type(s) | Action::Finished(s) | Action::CallUser(s) => {
                out.push_str("content=");
                write_quoted(&mut out, s);
            }
            Action::Launch(s) => {
                out.push_str("app=");
                write_quoted(&mut out, s);
            }
            Action::Wait
            | Action::PressBack
            | Action::PressHome
            | Action::PressEnter
            | Action::PressRecent => {}
        }
        out.push(')');
        f.write_str(&out)
    }
}

impl FromStr for Action {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_action(s)
    }
}

/// Actions serialize as their canonical DSL string.
impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_action(&s).map_err(serde::de::Error::custom)
    }
}

/// Serialize a [`Direction`] as its lowercase name.
impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Tuple(Vec<u32>),
    Str(String),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.bump();
        }
    }

    fn err(&self, reason: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            reason: reason.into(),
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected `{want}`, found `{c}`"))),
            None => Err(self.err(format!("expected `{want}`, found end of input"))),
        }
    }

    fn ident(&mut self) -> &'a str {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        &self.src[start..self.pos]
    }

    fn integer(&mut self) -> Result<u32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.bump();
        }
        let digits = &self.src[start..self.pos];
        if digits.is_empty() {
            return Err(self.err("expected a non-negative integer"));
        }
        digits
            .parse()
            .map_err(|_| self.err(format!("integer `{digits}` out of range")))
    }

    fn tuple(&mut self) -> Result<Vec<u32>, ParseError> {
        self.expect('(')?;
        let mut items = vec![self.integer()?];
        loop {
            self.skip_ws();
            match self.bump() {
                Some(',') => items.push(self.integer()?),
                Some(')') => return Ok(items),
                _ => return Err(self.err("expected `,` or `)` in coordinate tuple")),
            }
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let open = self.bump().ok_or_else(|| self.err("expected string"))?;
        let close = match open {
            '\'' => '\'',
            '"' => '"',
            // LaTeX-style `text' quoting as printed in prompt templates
            '`' => '\'',
            _ => return Err(self.err("expected quoted string")),
        };
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unterminated string")),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => return Err(self.err("dangling escape")),
                },
                Some(c) if c == close => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some('(') => self.tuple().map(Value::Tuple),
            Some('\'' | '"' | '`') => self.string().map(Value::Str),
            _ => Err(self.err("expected `(` tuple or quoted string")),
        }
    }
}

/// Parses one action in the surface syntax.
pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(ParseError::EmptyInput);
    }
    let mut cur = Cursor {
        src: trimmed,
        pos: 0,
    };
    let verb = cur.ident();
    if verb.is_empty() {
        return Err(cur.err("expected action name"));
    }
    let kind = ActionKind::from_name(verb).ok_or_else(|| ParseError::UnknownAction(verb.into()))?;
    cur.expect('(')?;

    let mut args: BTreeMap<String, Value> = BTreeMap::new();
    cur.skip_ws();
    if cur.peek() == Some(')') {
        cur.bump();
    } else {
        loop {
            cur.skip_ws();
            let key = cur.ident().to_string();
            if key.is_empty() {
                return Err(cur.err("expected parameter name"));
            }
            cur.expect('=')?;
            let value = cur.value()?;
            if args.insert(key.clone(), value).is_some() {
                return Err(malformed(kind, format!("duplicate parameter `{key}`")));
            }
            cur.skip_ws();
            match cur.bump() {
                Some(',') => {
                    cur.skip_ws();
                    if cur.peek() == Some(')') {
                        cur.bump();
                        break;
                    }
                }
                Some(')') => break,
                _ => return Err(cur.err("expected `,` or `)` after parameter")),
            }
        }
    }
    cur.skip_ws();
    if cur.pos != trimmed.len() {
        return Err(cur.err("trailing characters after action"));
    }
    build(kind, args)
}

fn malformed(kind: ActionKind, reason: impl Into<String>) -> ParseError {
    ParseError::MalformedParams {
        kind,
        reason: reason.into(),
    }
}

struct Args {
    kind: ActionKind,
    map: BTreeMap<String, Value>,
}

impl Args {
    fn point(&mut self, key: &str) -> Result<Option<Point>, ParseError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Tuple(v)) if v.len() == 2 => Ok(Some(Point::new(v[0], v[1]))),
            Some(Value::Tuple(v)) => Err(malformed(
                self.kind,
                format!("`{key}` needs 2 coordinates, got {}", v.len()),
            )),
            Some(Value::Str(_)) => Err(malformed(self.kind, format!("`{key}` must be (x, y)"))),
        }
    }

    fn req_point(&mut self, key: &str) -> Result<Point, ParseError> {
        self.point(key)?
            .ok_or_else(|| malformed(self.kind, format!("missing `{key}`")))
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, ParseError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(Value::Str(s)) => Ok(Some(s)),
            Some(Value::Tuple(_)) => {
                Err(malformed(self.kind, format!("`{key}` must be a quoted string")))
            }
        }
    }

    fn req_string(&mut self, key: &str) -> Result<String, ParseError> {
        self.string(key)?
            .ok_or_else(|| malformed(self.kind, format!("missing `{key}`")))
    }

    fn finish(self, action: Action) -> Result<Action, ParseError> {
        match self.map.keys().next() {
            Some(extra) => Err(malformed(self.kind, format!("unexpected parameter `{extra}`"))),
            None => Ok(action),
        }
    }
}

fn build(kind: ActionKind, map: BTreeMap<String, Value>) -> Result<Action, ParseError> {
    let mut args = Args { kind, map };
    let action = match kind {
        ActionKind::Click => Action::Click(args.req_point("box")?),
        ActionKind::LongPress => Action::LongPress(args.req_point("box")?),
        ActionKind::Drag => Action::drag(args.req_point("start")?, args.req_point("end")?),
        ActionKind::Scroll => {
            let start = args.point("start")?;
            let end = args.point("end")?;
            let dir = args.req_string("direction")?;
            let direction = dir
                .parse::<Direction>()
                .map_err(|e| malformed(kind, e.to_string()))?;
            let endpoints = match (start, end) {
                (Some(start), Some(end)) => Some(Endpoints { start, end }),
                (None, None) => None,
                _ => return Err(malformed(kind, "`start` and `end` must appear together")),
            };
            Action::Scroll {
                endpoints,
                direction,
            }
        }
        ActionKind::Type => Action::Type(args.req_string("content")?),
        ActionKind::Launch => Action::Launch(args.req_string("app")?),
        ActionKind::Finished => Action::Finished(args.string("content")?.unwrap_or_default()),
        ActionKind::CallUser => Action::CallUser(args.req_string("content")?),
        ActionKind::Wait => Action::Wait,
        ActionKind::PressBack => Action::PressBack,
        ActionKind::PressHome => Action::PressHome,
        ActionKind::PressEnter => Action::PressEnter,
        ActionKind::PressRecent => Action::PressRecent,
    };
    args.finish(action)
}

/// Canonical string of an action.
pub fn serialize_action(action: &Action) -> String {
    action.to_string()
}

// ---------------------------------------------------------------------------
// Matching

/// Case-folds and collapses whitespace for text-parameter comparison.
pub fn normalize_text(s: &str) -> String {
    let folded = caseless::default_case_fold_str(s);
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn points_close(a: Point, b: Point, tol: f64) -> bool {
    a.distance(&b) <= tol
}

/// Whether two actions denote the same operation.
///
/// Kinds must agree, every point pair must lie within `tol` pixels, scroll
/// directions must be equal and text parameters must be equal after
/// [`normalize_text`]. Scroll endpoints are compared only when both sides
/// carry them.
pub fn actions_match(a: &Action, b: &Action, tol: f64) -> bool {
    match (a, b) {
        (Action::Click(p), Action::Click(q)) | (Action::LongPress(p), Action::LongPress(q)) => {
            points_close(*p, *q, tol)
        }
        (Action::Drag(e), Action::Drag(f)) => {
            points_close(e.start, f.start, tol) && points_close(e.end, f.end, tol)
        }
        (
            Action::Scroll {
                endpoints: e,
                direction: d,
            },
            Action::Scroll {
                endpoints: f,
                direction: g,
            },
        ) => {
            d == g
                && match (e, f) {
                    (Some(e), Some(f)) => {
                        points_close(e.start, f.start, tol) && points_close(e.end, f.end, tol)
                    }
                    _ => true,
                }
        }
        (Action::Type(s), Action::Type(t))
        | (Action::Launch(s), Action::Launch(t))
        | (Action::Finished(s), Action::Finished(t))
        | (Action::CallUser(s), Action::CallUser(t)) => normalize_text(s) == normalize_text(t),
        _ => a.kind() == b.kind() && a.points().is_empty() && a.text().is_none(),
    }
}

// ---------------------------------------------------------------------------
// Tagged model output

/// A policy response split into its `<think>`, `<action>` and optional
/// `<conclusion>` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub think: Option<String>,
    pub action_raw: Option<String>,
    pub action: Result<Action, ParseError>,
    pub conclusion: Option<String>,
    /// `<think>` then `<action>`, each exactly once, not overlapping.
    pub format_ok: bool,
}

struct TagSpan {
    open: usize,
    body_start: usize,
    close: usize,
}

fn tag_spans(text: &str, tag: &str) -> (usize, usize, Option<TagSpan>) {
    let open_tag = format!("<{tag}>");
    let close_tag = format!("</{tag}>");
    let opens = text.matches(&open_tag).count();
    let closes = text.matches(&close_tag).count();
    let span = text.find(&open_tag).and_then(|open| {
        let body_start = open + open_tag.len();
        text[body_start..].find(&close_tag).map(|rel| TagSpan {
            open,
            body_start,
            close: body_start + rel,
        })
    });
    (opens, closes, span)
}

/// Splits a tagged response. Never fails: problems are recorded in
/// `format_ok` and `action`.
pub fn parse_model_output(text: &str) -> ModelOutput {
    let (t_open, t_close, think) = tag_spans(text, "think");
    let (a_open, a_close, action) = tag_spans(text, "action");
    let (_, _, conclusion) = tag_spans(text, "conclusion");

    let body = |s: &TagSpan| text[s.body_start..s.close].trim().to_string();

    let format_ok = t_open == 1
        && t_close == 1
        && a_open == 1
        && a_close == 1
        && match (&think, &action) {
            (Some(t), Some(a)) => t.close < a.open,
            _ => false,
        };

    let action_raw = action.as_ref().map(body);
    let parsed = match &action_raw {
        Some(raw) => parse_action(raw),
        None => Err(ParseError::MissingActionTag),
    };

    ModelOutput {
        think: think.as_ref().map(body),
        action_raw,
        action: parsed,
        conclusion: conclusion.as_ref().map(body),
        format_ok,
    }
}

/// Renders a response in the tagged template.
pub fn render_model_output(think: &str, action: &Action, conclusion: Option<&str>) -> String {
    let mut out = format!("<think>{think}</think><action>{action}</action>");
    if let Some(c) = conclusion {
        let _ = write!(out, "<conclusion>{c}</conclusion>");
    }
    out
}
