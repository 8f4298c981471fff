//! Task tags, attribute tags, and the structured output grammar.
//!
//! A structured output is `task_tag+ content? attribute_tag*`: a leading
//! maximal run of task tags, free text in the middle, and a trailing maximal
//! run of attribute tags. Task tags are lowercase (`<asr>`), attribute tags
//! uppercase (`<ADULT>`), and every attribute label belongs to exactly one
//! task's closed label set.

use thiserror::Error;

/// The closed set of tasks the pipeline understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskTag {
    /// Speech recognition: transcript content.
    Asr,
    /// Recognition with word-level timestamps: "name|frame" pairs.
    Srwt,
    /// Vocal event detection.
    Ved,
    /// Speech emotion recognition.
    Ser,
    /// Speaking style recognition.
    Ssr,
    /// Speaker gender classification.
    Sgc,
    /// Speaker age prediction.
    Sap,
    /// Speech-to-text chat (text-only at this scale).
    Sttc,
}

impl TaskTag {
    pub const ALL: [TaskTag; 8] = [
        TaskTag::Asr,
        TaskTag::Srwt,
        TaskTag::Ved,
        TaskTag::Ser,
        TaskTag::Ssr,
        TaskTag::Sgc,
        TaskTag::Sap,
        TaskTag::Sttc,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            TaskTag::Asr => "<asr>",
            TaskTag::Srwt => "<srwt>",
            TaskTag::Ved => "<ved>",
            TaskTag::Ser => "<ser>",
            TaskTag::Ssr => "<ssr>",
            TaskTag::Sgc => "<sgc>",
            TaskTag::Sap => "<sap>",
            TaskTag::Sttc => "<sttc>",
        }
    }

    /// Surface lookup. `<age>` is accepted as a legacy alias for `<sap>`.
    pub fn from_surface(s: &str) -> Option<TaskTag> {
        match s {
            "<asr>" => Some(TaskTag::Asr),
            "<srwt>" => Some(TaskTag::Srwt),
            "<ved>" => Some(TaskTag::Ved),
            "<ser>" => Some(TaskTag::Ser),
            "<ssr>" => Some(TaskTag::Ssr),
            "<sgc>" => Some(TaskTag::Sgc),
            "<sap>" | "<age>" => Some(TaskTag::Sap),
            "<sttc>" => Some(TaskTag::Sttc),
            _ => None,
        }
    }

    /// The closed attribute label set owned by this task.
    pub fn attribute_labels(self) -> &'static [&'static str] {
        match self {
            TaskTag::Sap => &["<CHILD>", "<ADULT>", "<OLD>"],
            TaskTag::Sgc => &["<MALE>", "<FEMALE>"],
            TaskTag::Ser => &["<HAPPY>", "<SAD>", "<ANGRY>", "<NEUTRAL>", "<SURPRISE>"],
            TaskTag::Ssr => &["<NEWS>", "<CHAT>", "<STORY>"],
            TaskTag::Ved => &["<LAUGH>", "<COUGH>", "<NOISE>", "<NONE>"],
            TaskTag::Asr | TaskTag::Srwt | TaskTag::Sttc => &[],
        }
    }
}

impl std::fmt::Display for TaskTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.surface())
    }
}

/// Every registered attribute tag, in vocabulary order.
pub fn attribute_registry() -> impl Iterator<Item = AttributeTag> {
    TaskTag::ALL
        .into_iter()
        .flat_map(|t| t.attribute_labels().iter().map(move |&l| AttributeTag {
            label: l,
            owner: t,
        }))
}

/// One label from a task's closed set, e.g. `<ADULT>` owned by `<sap>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttributeTag {
    pub label: &'static str,
    pub owner: TaskTag,
}

impl AttributeTag {
    pub fn from_surface(s: &str) -> Option<AttributeTag> {
        attribute_registry().find(|a| a.label == s)
    }

    pub fn surface(&self) -> &'static str {
        self.label
    }
}

impl std::fmt::Display for AttributeTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("output does not start with a task tag")]
    MissingTaskTag,
    #[error("unknown tag {token:?}")]
    UnknownTag { token: String },
    #[error("attribute {attr} requires task {owner} which is absent")]
    OrphanAttribute { attr: String, owner: TaskTag },
    #[error("task tag {tag} appears more than once")]
    DuplicateTaskTag { tag: TaskTag },
    #[error("tag {token:?} in content position")]
    MisplacedTag { token: String },
    #[error("unclosed tag starting at byte {at}")]
    UnclosedTag { at: usize },
    #[error("invalid structured output: {0}")]
    Invalid(String),
}

/// Parsed (task tags, content, attribute tags) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredOutput {
    pub tasks: Vec<TaskTag>,
    pub content: String,
    pub attributes: Vec<AttributeTag>,
}

impl StructuredOutput {
    pub fn new(
        tasks: Vec<TaskTag>,
        content: impl Into<String>,
        attributes: Vec<AttributeTag>,
    ) -> StructuredOutput {
        StructuredOutput {
            tasks,
            content: content.into(),
            attributes,
        }
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.tasks.is_empty() {
            return Err(ParseError::Invalid("tasks must be nonempty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &t in &self.tasks {
            if !seen.insert(t) {
                return Err(ParseError::DuplicateTaskTag { tag: t });
            }
        }
        for a in &self.attributes {
            if !self.tasks.contains(&a.owner) {
                return Err(ParseError::OrphanAttribute {
                    attr: a.label.to_string(),
                    owner: a.owner,
                });
            }
        }
        Ok(())
    }

    pub fn task_set(&self) -> std::collections::BTreeSet<TaskTag> {
        self.tasks.iter().copied().collect()
    }
}

/// Canonical rendering: task tags, then content, then attribute tags,
/// each in the order given. `parse_output(render_target(o)) == o`.
pub fn render_target(o: &StructuredOutput) -> Result<String, ParseError> {
    o.validate()?;
    let mut out = String::new();
    for t in &o.tasks {
        out.push_str(t.surface());
    }
    out.push_str(&o.content);
    for a in &o.attributes {
        out.push_str(a.surface());
    }
    Ok(out)
}

enum Item {
    Task(TaskTag),
    Attr(AttributeTag),
    Char(char),
}

fn lex(text: &str) -> Result<Vec<Item>, ParseError> {
    let mut items = Vec::new();
    let bytes = text.char_indices().collect::<Vec<_>>();
    let mut i = 0;
    while i < bytes.len() {
        let (at, c) = bytes[i];
        if c == '<' {
            let close = bytes[i..].iter().position(|&(_, c)| c == '>');
            let Some(rel) = close else {
                return Err(ParseError::UnclosedTag { at });
            };
            let end = bytes[i + rel].0 + 1;
            let token = &text[at..end];
            if let Some(t) = TaskTag::from_surface(token) {
                items.push(Item::Task(t));
            } else if let Some(a) = AttributeTag::from_surface(token) {
                items.push(Item::Attr(a));
            } else {
                return Err(ParseError::UnknownTag {
                    token: token.to_string(),
                });
            }
            i += rel + 1;
        } else {
            items.push(Item::Char(c));
            i += 1;
        }
    }
    Ok(items)
}

/// Parse model output text into its structured triple.
pub fn parse_output(text: &str) -> Result<StructuredOutput, ParseError> {
    let items = lex(text)?;
    let mut tasks = Vec::new();
    let mut idx = 0;
    while let Some(Item::Task(t)) = items.get(idx) {
        if tasks.contains(t) {
            return Err(ParseError::DuplicateTaskTag { tag: *t });
        }
        tasks.push(*t);
        idx += 1;
    }
    if tasks.is_empty() {
        return Err(ParseError::MissingTaskTag);
    }
    let mut attrs_rev = Vec::new();
    let mut end = items.len();
    while end > idx {
        if let Item::Attr(a) = items[end - 1] {
            attrs_rev.push(a);
            end -= 1;
        } else {
            break;
        }
    }
    let mut content = String::new();
    for item in &items[idx..end] {
        match item {
            Item::Char(c) => content.push(*c),
            Item::Task(t) => {
                return Err(ParseError::MisplacedTag {
                    token: t.surface().to_string(),
                })
            }
            Item::Attr(a) => {
                return Err(ParseError::MisplacedTag {
                    token: a.surface().to_string(),
                })
            }
        }
    }
    let out = StructuredOutput {
        tasks,
        content,
        attributes: attrs_rev.into_iter().rev().collect(),
    };
    out.validate()?;
    Ok(out)
}

/// Whether an instruction is a fixed tag string or free-form language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstructionForm {
    Fixed,
    Natural,
}

impl InstructionForm {
    pub fn as_str(self) -> &'static str {
        match self {
            InstructionForm::Fixed => "fixed",
            InstructionForm::Natural => "natural",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<InstructionForm> {
        match s {
            "fixed" => Some(InstructionForm::Fixed),
            "natural" => Some(InstructionForm::Natural),
            _ => None,
        }
    }
}

/// A prompt plus the ground-truth task set it asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub text: String,
    pub form: InstructionForm,
    pub intended_tasks: Vec<TaskTag>,
}

impl Instruction {
    pub fn fixed(tasks: &[TaskTag]) -> Instruction {
        Instruction {
            text: tasks.iter().map(|t| t.surface()).collect(),
            form: InstructionForm::Fixed,
            intended_tasks: tasks.to_vec(),
        }
    }

    pub fn natural(text: impl Into<String>, tasks: &[TaskTag]) -> Instruction {
        Instruction {
            text: text.into(),
            form: InstructionForm::Natural,
            intended_tasks: tasks.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        if self.intended_tasks.is_empty() {
            return Err(ParseError::Invalid("intended_tasks must be nonempty".into()));
        }
        if self.form == InstructionForm::Fixed {
            let expected: String = self.intended_tasks.iter().map(|t| t.surface()).collect();
            if self.text != expected {
                return Err(ParseError::Invalid(format!(
                    "fixed instruction text {:?} is not its task tag string {:?}",
                    self.text, expected
                )));
            }
        }
        Ok(())
    }

    pub fn intended_set(&self) -> std::collections::BTreeSet<TaskTag> {
        self.intended_tasks.iter().copied().collect()
    }
}
