//! Declarative plausibility rules.
//!
//! Operators reviewing automatic inspection reports apply tacit knowledge:
//! roots grow in through joints and connections, circumferential fissures
//! cluster near joints, certain findings only occur in certain pipe
//! materials. This module expresses such knowledge as an ordered list of
//! rules, each a conjunction of named predicates ("atoms") over one
//! detection plus its pipe context, with an action that fires when all atoms
//! hold. Actions deliberately stop short of hard suppression by default:
//! the shipped rules down-weight confidence or attach a note, leaving the
//! final call to thresholds chosen at evaluation time.
//!
//! The text format is line oriented, one rule per line:
//!
//! ```text
//! # comment
//! name: atom & atom & ... => action
//! root_far_from_joints: class_is(BBA) & min_distance_to_joint_or_connection_exceeds(1) => scale_confidence(0.5)
//! ```
//!
//! Parse errors carry the 1-based line number of the offending rule.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::domain::{DefectClass, Detection, Material, MosaicGeometry, PixelBox};

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct RuleParseError {
    pub line: usize,
    pub message: String,
}

/// One predicate over a detection and its pipe context. Distances are in
/// meters along the pipe axis.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    ClassIs(DefectClass),
    /// True when the detection is farther than the given distance from every
    /// known joint and every known connection.
    MinDistanceToJointOrConnectionExceeds(f64),
    /// True when some joint lies within the given distance.
    WithinDistanceOfJoint(f64),
    /// True when the box covers at least this fraction of the mosaic height.
    VerticalExtentFractionAtLeast(f64),
    /// True when height / width is at least this ratio.
    AspectRatioHOverWAtLeast(f64),
    MaterialIs(Material),
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::ClassIs(c) => write!(f, "class_is({})", c.code()),
            Atom::MinDistanceToJointOrConnectionExceeds(d) => {
                write!(f, "min_distance_to_joint_or_connection_exceeds({d})")
            }
            Atom::WithinDistanceOfJoint(d) => write!(f, "within_distance_of_joint({d})"),
            Atom::VerticalExtentFractionAtLeast(v) => {
                write!(f, "vertical_extent_fraction_at_least({v})")
            }
            Atom::AspectRatioHOverWAtLeast(r) => {
                write!(f, "aspect_ratio_h_over_w_at_least({r})")
            }
            Atom::MaterialIs(m) => write!(f, "material_is({m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Suppress,
    /// Multiplies the detection confidence by a factor in (0, 1].
    ScaleConfidence(f64),
    /// Attaches a free-text note to the detection in the audit trail.
    Tag(String),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Suppress => f.write_str("suppress"),
            Action::ScaleConfidence(factor) => write!(f, "scale_confidence({factor})"),
            Action::Tag(note) => write!(f, "tag({note})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub atoms: Vec<Atom>,
    pub action: Action,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.name)?;
        for (i, atom) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(" & ")?;
            }
            write!(f, "{atom}")?;
        }
        write!(f, " => {}", self.action)
    }
}

/// Ordered rule list. Rules are applied in file order; for one detection,
/// the first `suppress` that fires ends its processing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl fmt::Display for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

impl RuleSet {
    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Parses the line-oriented rule format. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn parse(text: &str) -> Result<RuleSet, RuleParseError> {
        let mut rules: Vec<Rule> = Vec::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let rule = parse_rule(trimmed, line)?;
            if rules.iter().any(|r| r.name == rule.name) {
                return Err(RuleParseError {
                    line,
                    message: format!("duplicate rule name {:?}", rule.name),
                });
            }
            rules.push(rule);
        }
        Ok(RuleSet { rules })
    }

    /// The default plausibility rules. All of them down-weight or annotate;
    /// none suppresses outright.
    pub fn expert_defaults() -> RuleSet {
        RuleSet {
            rules: vec![
                // Roots enter through joints and lateral connections; a root
                // detection far from both is usually a misclassified stain.
                Rule {
                    name: "root_far_from_joints".into(),
                    atoms: vec![
                        Atom::ClassIs(DefectClass::Root),
                        Atom::MinDistanceToJointOrConnectionExceeds(1.0),
                    ],
                    action: Action::ScaleConfidence(0.5),
                },
                // Circumferential fissures follow bending stress, which
                // concentrates at the joints.
                Rule {
                    name: "circumferential_fissure_off_joint".into(),
                    atoms: vec![
                        Atom::ClassIs(DefectClass::Fissure),
                        Atom::VerticalExtentFractionAtLeast(0.5),
                        Atom::AspectRatioHOverWAtLeast(2.0),
                        Atom::MinDistanceToJointOrConnectionExceeds(0.5),
                    ],
                    action: Action::ScaleConfidence(0.5),
                },
                // On vitrified clay, a circumferential crack right at a
                // joint is often only glaze deep.
                Rule {
                    name: "glaze_fissure_near_joint".into(),
                    atoms: vec![
                        Atom::ClassIs(DefectClass::Fissure),
                        Atom::MaterialIs(Material::VitrifiedClay),
                        Atom::VerticalExtentFractionAtLeast(0.5),
                        Atom::AspectRatioHOverWAtLeast(2.0),
                        Atom::WithinDistanceOfJoint(0.3),
                    ],
                    action: Action::Tag("possible glaze fissure, verify depth".into()),
                },
                Rule {
                    name: "concrete_corrosion_note".into(),
                    atoms: vec![
                        Atom::ClassIs(DefectClass::SurfaceDamage),
                        Atom::MaterialIs(Material::Concrete),
                    ],
                    action: Action::Tag("consistent with chemical corrosion on concrete".into()),
                },
            ],
        }
    }
}

fn parse_rule(text: &str, line: usize) -> Result<Rule, RuleParseError> {
    let fail = |message: String| RuleParseError { line, message };
    let (name, rest) = text
        .split_once(':')
        .ok_or_else(|| fail("expected `name: atoms => action`".into()))?;
    let name = name.trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-".contains(c)) {
        return Err(fail(format!(
            "rule name {name:?} must be non-empty and use only letters, digits, `_`, `-`"
        )));
    }
    let (predicate, action_text) = rest
        .split_once("=>")
        .ok_or_else(|| fail("missing `=>` between atoms and action".into()))?;
    let mut atoms = Vec::new();
    for part in predicate.split('&') {
        atoms.push(parse_atom(part.trim(), line)?);
    }
    let action = parse_action(action_text.trim(), line)?;
    Ok(Rule { name: name.to_string(), atoms, action })
}

/// Splits `name(arg)` or bare `name`; returns `(name, Some(arg))`.
fn split_call(text: &str) -> Option<(&str, Option<&str>)> {
    match text.split_once('(') {
        None => Some((text, None)),
        Some((name, rest)) => {
            let arg = rest.strip_suffix(')')?;
            Some((name.trim(), Some(arg.trim())))
        }
    }
}

fn parse_atom(text: &str, line: usize) -> Result<Atom, RuleParseError> {
    let fail = |message: String| RuleParseError { line, message };
    let (name, arg) = split_call(text)
        .ok_or_else(|| fail(format!("malformed atom {text:?}: unbalanced parentheses")))?;
    let arg_of = |atom: &str| {
        arg.filter(|a| !a.is_empty())
            .ok_or_else(|| fail(format!("atom {atom} requires an argument")))
    };
    let number = |atom: &str, lo: f64, hi: f64| -> Result<f64, RuleParseError> {
        let raw = arg_of(atom)?;
        let value: f64 = raw
            .parse()
            .map_err(|_| fail(format!("atom {atom}: {raw:?} is not a number")))?;
        if !(value.is_finite() && (lo..=hi).contains(&value)) {
            return Err(fail(format!(
                "atom {atom}: {value} outside the valid range [{lo}, {hi}]"
            )));
        }
        Ok(value)
    };
    match name {
        "class_is" => {
            let raw = arg_of("class_is")?;
            let class = raw
                .parse::<DefectClass>()
                .map_err(|_| fail(format!("class_is: unknown class {raw:?}")))?;
            Ok(Atom::ClassIs(class))
        }
        "min_distance_to_joint_or_connection_exceeds" => {
            Ok(Atom::MinDistanceToJointOrConnectionExceeds(number(
                "min_distance_to_joint_or_connection_exceeds",
                0.0,
                f64::INFINITY,
            )?))
        }
        "within_distance_of_joint" => Ok(Atom::WithinDistanceOfJoint(number(
            "within_distance_of_joint",
            0.0,
            f64::INFINITY,
        )?)),
        "vertical_extent_fraction_at_least" => Ok(Atom::VerticalExtentFractionAtLeast(
            number("vertical_extent_fraction_at_least", 0.0, 1.0)?,
        )),
        "aspect_ratio_h_over_w_at_least" => Ok(Atom::AspectRatioHOverWAtLeast(number(
            "aspect_ratio_h_over_w_at_least",
            0.0,
            f64::INFINITY,
        )?)),
        "material_is" => {
            let raw = arg_of("material_is")?;
            let material = raw
                .parse::<Material>()
                .map_err(|_| fail(format!("material_is: unknown material {raw:?}")))?;
            Ok(Atom::MaterialIs(material))
        }
        other => Err(fail(format!("unknown atom {other:?}"))),
    }
}

fn parse_action(text: &str, line: usize) -> Result<Action, RuleParseError> {
    let fail = |message: String| RuleParseError { line, message };
    let (name, arg) = split_call(text)
        .ok_or_else(|| fail(format!("malformed action {text:?}: unbalanced parentheses")))?;
    match name {
        "suppress" => match arg {
            None => Ok(Action::Suppress),
            Some(_) => Err(fail("action suppress takes no argument".into())),
        },
        "scale_confidence" => {
            let raw = arg
                .filter(|a| !a.is_empty())
                .ok_or_else(|| fail("action scale_confidence requires a factor".into()))?;
            let factor: f64 = raw
                .parse()
                .map_err(|_| fail(format!("scale_confidence: {raw:?} is not a number")))?;
            if !(factor.is_finite() && factor > 0.0 && factor <= 1.0) {
                return Err(fail(format!(
                    "scale_confidence factor must lie in (0, 1], got {factor}"
                )));
            }
            Ok(Action::ScaleConfidence(factor))
        }
        "tag" => {
            let note = arg
                .filter(|a| !a.is_empty())
                .ok_or_else(|| fail("action tag requires a note".into()))?;
            Ok(Action::Tag(note.to_string()))
        }
        other => Err(fail(format!("unknown action {other:?}"))),
    }
}

/// Everything the atoms may reference about the pipe a detection sits in.
/// Joint positions come from the mosaic geometry; connection boxes usually
/// come from annotations (or, failing that, from confident detections).
#[derive(Debug, Clone)]
pub struct PipeContext {
    pub geometry: MosaicGeometry,
    pub connections: Vec<PixelBox>,
}

impl PipeContext {
    pub fn new(geometry: MosaicGeometry, connections: Vec<PixelBox>) -> Self {
        PipeContext { geometry, connections }
    }

    /// Builds a context from whatever the interchange document provides:
    /// annotated connections when present, otherwise connection detections
    /// with confidence at least 0.5.
    pub fn infer(
        geometry: MosaicGeometry,
        annotations: &[crate::domain::Annotation],
        detections: &[Detection],
    ) -> Self {
        let mut connections: Vec<PixelBox> = annotations
            .iter()
            .filter(|a| a.class == DefectClass::Connection)
            .map(|a| a.bbox)
            .collect();
        if connections.is_empty() {
            connections = detections
                .iter()
                .filter(|d| d.class == DefectClass::Connection && d.confidence >= 0.5)
                .map(|d| d.bbox)
                .collect();
        }
        PipeContext { geometry, connections }
    }

    /// Axial distance to the nearest joint, 0 when a joint crosses the box;
    /// None when the geometry lists no joints.
    pub fn joint_distance_m(&self, b: &PixelBox) -> Option<f64> {
        self.geometry
            .joint_positions_px
            .iter()
            .map(|&j| {
                if j >= b.x && j <= b.right() {
                    0
                } else {
                    (b.x - j).abs().min((j - b.right()).abs())
                }
            })
            .min()
            .map(|px| self.geometry.px_to_m(px))
    }

    /// Axial gap to the nearest connection box, 0 on overlap; None when no
    /// connections are known.
    pub fn connection_distance_m(&self, b: &PixelBox) -> Option<f64> {
        self.connections
            .iter()
            .map(|c| (b.x.max(c.x) - b.right().min(c.right())).max(0))
            .min()
            .map(|px| self.geometry.px_to_m(px))
    }
}

/// Audit trail entry. Every action taken (and every rule skipped for lack of
/// context) is recorded so a report reader can see why a confidence changed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RuleEvent {
    Suppressed {
        detection_id: String,
        rule: String,
    },
    ConfidenceScaled {
        detection_id: String,
        rule: String,
        factor: f64,
        before: f64,
        after: f64,
    },
    Tagged {
        detection_id: String,
        rule: String,
        note: String,
    },
    RuleSkipped {
        rule: String,
        reason: String,
    },
}

/// Which context features a rule needs; `None` when it can always run.
fn missing_context(rule: &Rule, ctx: &PipeContext) -> Option<String> {
    let has_joints = !ctx.geometry.joint_positions_px.is_empty();
    let has_connections = !ctx.connections.is_empty();
    for atom in &rule.atoms {
        match atom {
            Atom::MinDistanceToJointOrConnectionExceeds(_) if !has_joints && !has_connections => {
                return Some("no joint positions or connection boxes in context".into());
            }
            Atom::WithinDistanceOfJoint(_) if !has_joints => {
                return Some("no joint positions in context".into());
            }
            _ => {}
        }
    }
    None
}

fn atom_holds(atom: &Atom, det: &Detection, ctx: &PipeContext) -> bool {
    match atom {
        Atom::ClassIs(class) => det.class == *class,
        Atom::MinDistanceToJointOrConnectionExceeds(limit) => {
            let joint = ctx.joint_distance_m(&det.bbox);
            let connection = ctx.connection_distance_m(&det.bbox);
            let nearest = match (joint, connection) {
                (Some(j), Some(c)) => j.min(c),
                (Some(j), None) => j,
                (None, Some(c)) => c,
                // Guarded by missing_context; unreachable in apply_rules.
                (None, None) => return false,
            };
            nearest > *limit
        }
        Atom::WithinDistanceOfJoint(limit) => {
            ctx.joint_distance_m(&det.bbox).is_some_and(|d| d <= *limit)
        }
        Atom::VerticalExtentFractionAtLeast(fraction) => {
            det.bbox.h as f64 / ctx.geometry.height_px as f64 >= *fraction
        }
        Atom::AspectRatioHOverWAtLeast(ratio) => {
            det.bbox.h as f64 / det.bbox.w as f64 >= *ratio
        }
        Atom::MaterialIs(material) => ctx.geometry.material == *material,
    }
}

/// Applies the rule set to every detection, in input order, rules in file
/// order. Returns surviving detections (suppressed ones removed, scaled
/// confidences applied) plus the audit trail. Rules whose atoms reference
/// joint or connection data the context does not have are skipped entirely,
/// with one `RuleSkipped` event each.
pub fn apply_rules(
    detections: Vec<Detection>,
    ctx: &PipeContext,
    rules: &RuleSet,
) -> (Vec<Detection>, Vec<RuleEvent>) {
    let mut events = Vec::new();
    let mut runnable = Vec::with_capacity(rules.rules.len());
    for rule in &rules.rules {
        match missing_context(rule, ctx) {
            Some(reason) => events.push(RuleEvent::RuleSkipped { rule: rule.name.clone(), reason }),
            None => runnable.push(rule),
        }
    }

    let mut kept = Vec::with_capacity(detections.len());
    'next_detection: for mut det in detections {
        for rule in &runnable {
            if !rule.atoms.iter().all(|atom| atom_holds(atom, &det, ctx)) {
                continue;
            }
            match &rule.action {
                Action::Suppress => {
                    events.push(RuleEvent::Suppressed {
                        detection_id: det.id.clone(),
                        rule: rule.name.clone(),
                    });
                    continue 'next_detection;
                }
                Action::ScaleConfidence(factor) => {
                    let before = det.confidence;
                    det.confidence *= factor;
                    events.push(RuleEvent::ConfidenceScaled {
                        detection_id: det.id.clone(),
                        rule: rule.name.clone(),
                        factor: *factor,
                        before,
                        after: det.confidence,
                    });
                }
                Action::Tag(note) => {
                    events.push(RuleEvent::Tagged {
                        detection_id: det.id.clone(),
                        rule: rule.name.clone(),
                        note: note.clone(),
                    });
                }
            }
        }
        kept.push(det);
    }
    (kept, events)
}
