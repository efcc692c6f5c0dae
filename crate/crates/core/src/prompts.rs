//! Prompt texts shared by the agent loop, the verifier and the mock generator.
//!
//! The first line of each system prompt is a stable marker the mock generator
//! dispatches on.

use crate::source::ComponentKind;

pub const AGENT_MARKER: &str = "You are a repository documentation agent.";
pub const SELF_EVAL_MARKER: &str = "You review a draft of code documentation.";
pub const CLAIM_MARKER: &str = "You split code documentation into atomic factual claims.";

pub const AGENT_SYSTEM: &str = "You are a repository documentation agent.
You document one unit of a code repository at a time. Units arrive in dependency order, so the
documentation of everything a unit depends on is normally already stored in memory.

Answer every turn with one <thought> block followed by exactly one action block:

<read>
internal: <unit id>
external: <natural-language question>
</read>
    Fetch context. Internal ids return stored documentation when available, otherwise source.
    External questions go to a search service. Give one request per line, at least one request.

<write>
<markdown documentation>
</write>
    Replace the current draft with a complete document in the requested format.

<verify/>
    Score the current draft and check it against stored documentation of related units.

<finish/>
    Commit the draft. Only accepted after the draft passed verification.

After each action you receive an observation. A failed verification lists the claims that no
reference supports; fix them with another <read> or <write>.";

pub const SELF_EVAL_SYSTEM: &str = "You review a draft of code documentation.
Rate the draft on three criteria, each a number between 0 and 1:
consistency (agreement with the code and context), completeness (required content present),
helpfulness (useful to a developer new to the code).
Reply with one JSON object and nothing else:
{\"consistency\": 0.0, \"completeness\": 0.0, \"helpfulness\": 0.0}";

pub const CLAIM_SYSTEM: &str = "You split code documentation into atomic factual claims.
A claim is one checkable statement about behaviour, parameters, return values, side effects or
design. Leave out opinions, vague wording and section headings.
Reply with a JSON array of strings and nothing else, for example:
[\"parse returns None for empty input\", \"retries defaults to 3\"]";

pub const REPROMPT_SUFFIX: &str =
    "\n\nYour previous reply could not be used. Follow the requested reply format exactly.";

pub const FUNCTION_FORMAT: &str = "## Summary:
- what the function achieves, in one line, without restating its name
## Description:
- known callers and the pipeline stage where it runs
- the responsibility it keeps apart from its callers
## Args: (only when it takes parameters)
- each parameter with type, accepted values and default
## Returns:
- meaning of the result, including edge-case values
## Raises: (only when the body raises)
- each exception and the condition that triggers it
## Constraints:
- preconditions and postconditions
## Side Effects: (only when present)
- I/O, mutated external state, calls to services
## Control Flow: (only when the body branches or loops)
- a Mermaid flowchart TD of the main branches and loops
## Examples: (only when public and non-trivial)
- a realistic call including error handling";

pub const METHOD_FORMAT: &str = "## Summary:
- what the method does to its object, in one line, without restating its name
## Description:
- known callers and the lifecycle stage where it runs
- why it is a separate method
## Args: (only when it takes parameters besides self)
- each parameter with type, accepted values and default
## Returns:
- type, possible values and edge-case values
## Raises: (only when the body raises)
- each exception and the condition that triggers it
## State Changes:
- self attributes read and self attributes written
## Constraints:
- what must hold before the call and what holds after it
## Side Effects: (only when present)
- I/O, service calls, changes to objects other than self
## Control Flow: (only when the body branches or loops)
- a Mermaid flowchart TD of the main branches and loops
## Examples: (only when public and non-trivial)
- a realistic call including error handling";

pub const CLASS_FORMAT: &str = "## Summary:
- what the class represents, in one line
## Description:
- when instances are created and by whom
- the responsibility boundary of the abstraction
## Args: (only when the constructor takes parameters)
- constructor parameters with defaults and caller constraints
## Returns:
- what constructing the class yields and the state of a fresh instance
## State:
- each attribute with type, valid values and the invariants it takes part in
## Lifecycle:
- creation, the usual order of method calls, cleanup
## Method Map:
- a Mermaid diagram of calls between methods
## Raises: (only when construction can raise)
- exceptions from __init__ and their triggers
## Side Effects: (only when present)
- I/O or external state touched by the class
## Example: (only when public and non-trivial)
- creation, a typical call sequence and cleanup";

pub const MODULE_FORMAT: &str = "## Tree:
- indented listing of the files and sub-directories of this module
## Role:
- the single responsibility this module owns, without restating its name
## Description:
- the main consumers of the module inside the repository
- what ties its components together
## Components:
- every public class, function and constant with signature and a one-line role
- a Mermaid graph of dependencies between these components
## Public API:
- the symbols other modules use, with signature and a usage note
## Dependencies:
- internal modules and third-party libraries it imports, and why
## Constraints:
- ordering, initialisation or thread-safety rules for callers";

pub const REPO_FORMAT: &str = "## Tree:
- top-level directory hierarchy two or three levels deep, each major directory annotated
## Purpose:
- the problem the repository solves, its users and where it fits
## Architecture:
- a Mermaid diagram of the end-to-end data flow
- the main abstractions and patterns
## Entry Points:
- CLI commands, importable APIs or service endpoints and their arguments
## Core Features:
- key capabilities, each with the modules or components implementing it
## Dependencies:
- important external dependencies and version constraints
## Configuration: (only when configuration changes behaviour)
- config files, environment variables and runtime parameters
## Extension Points: (only when extension is a first-class concern)
- plugins, hooks, subclassing or config-driven behaviour";

pub fn component_format(kind: ComponentKind) -> &'static str {
    match kind {
        ComponentKind::Function => FUNCTION_FORMAT,
        ComponentKind::Method => METHOD_FORMAT,
        ComponentKind::Class => CLASS_FORMAT,
    }
}

pub fn self_eval_prompt(unit: &str, draft: &str) -> String {
    format!("Documentation of `{unit}`:\n<DOCUMENTATION>\n{draft}\n</DOCUMENTATION>\nRate it now.")
}

pub fn claim_prompt(draft: &str) -> String {
    format!("<DOCUMENTATION>\n{draft}\n</DOCUMENTATION>\nList the atomic factual claims of this documentation.")
}

/// Body of a `<TAG>...</TAG>` block, if present.
pub fn block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(text[start..end].trim_matches('\n'))
}

/// Header names listed in a format block, without trailing notes.
pub fn format_headers(format: &str) -> Vec<&str> {
    format
        .lines()
        .filter_map(|l| l.strip_prefix("## "))
        .map(|h| h.split(':').next().unwrap_or(h).trim())
        .collect()
}
