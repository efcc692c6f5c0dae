//! Syntactic extraction from a single Python file.
//!
//! Everything here is file-local: no knowledge of other files is needed, so
//! files can be parsed independently (and in parallel). Name resolution across
//! files happens later in [`super::resolve`].

use std::collections::BTreeSet;

use tree_sitter::{Node, Parser};

use super::{ComponentKind, SourceTraits};

/// How a name occurrence is used inside a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Role {
    /// Callee position of a call expression.
    Call,
    /// Base class in a class header.
    Base,
    /// Any other read or write of the name.
    Load,
    /// Name introduced by a nested `def`/`class`.
    Def,
    /// Function or lambda parameter.
    Param,
}

/// A (possibly dotted) name occurrence, e.g. `self.items` or `pkg.mod.f`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct NameUse {
    pub chain: Vec<String>,
    pub role: Role,
}

/// `alias` is bound to the absolute dotted `target` by an import statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ImportBinding {
    pub alias: String,
    pub target: String,
}

/// File-level naming context shared by every component of a file.
#[derive(Debug, Clone, Default)]
pub(crate) struct FileScope {
    pub module: String,
    pub package: String,
    pub bindings: Vec<ImportBinding>,
    pub top_level: BTreeSet<String>,
}

impl FileScope {
    pub fn binding(&self, alias: &str) -> Option<&ImportBinding> {
        // later imports shadow earlier ones
        self.bindings.iter().rev().find(|b| b.alias == alias)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RawComponent {
    pub qualname: String,
    pub kind: ComponentKind,
    pub start_line: usize,
    pub end_line: usize,
    pub source: String,
    pub signature: String,
    pub parameters: Vec<String>,
    pub traits: SourceTraits,
    pub uses: Vec<NameUse>,
    pub local_bindings: Vec<ImportBinding>,
    /// Qualified name of the class whose `self`/`cls` is in scope.
    pub class_qualname: Option<String>,
}

#[derive(Debug, Clone)]
pub(crate) struct ParsedFile {
    pub scope: FileScope,
    pub imports: Vec<String>,
    pub components: Vec<RawComponent>,
    pub mentions_configuration: bool,
    pub declares_extension_points: bool,
}

/// Dotted module name and package for a repository-relative file path.
pub(crate) fn module_name(rel_path: &str) -> (String, String) {
    let stem = rel_path.strip_suffix(".py").unwrap_or(rel_path);
    let mut parts: Vec<&str> = stem.split('/').filter(|p| !p.is_empty()).collect();
    let is_init = parts.last() == Some(&"__init__");
    if is_init && parts.len() > 1 {
        parts.pop();
    }
    let module = parts.join(".");
    let package = if is_init {
        module.clone()
    } else {
        parts[..parts.len().saturating_sub(1)].join(".")
    };
    (module, package)
}

pub(crate) fn parse_file(rel_path: &str, text: &str) -> Result<ParsedFile, String> {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .map_err(|e| format!("cannot load Python grammar: {e}"))?;
    let tree = parser
        .parse(text, None)
        .ok_or_else(|| "parser returned no tree".to_string())?;
    let root = tree.root_node();
    if root.has_error() {
        let line = first_error_line(root).unwrap_or(0);
        return Err(format!("syntax error near line {line}"));
    }

    let src = text.as_bytes();
    let (module, package) = module_name(rel_path);
    let mut scope = FileScope {
        module,
        package,
        ..FileScope::default()
    };
    let mut imports = Vec::new();
    let mut defs: Vec<(Node, Node)> = Vec::new();

    collect_top_level(root, src, &mut scope, &mut imports, &mut defs);

    let mut components = Vec::new();
    for (outer, def) in defs {
        let name = field_text(def, "name", src);
        match def.kind() {
            "function_definition" => {
                components.push(build_component(outer, def, src, &scope, name.clone(), None, ComponentKind::Function));
            }
            "class_definition" => {
                components.push(build_component(
                    outer,
                    def,
                    src,
                    &scope,
                    name.clone(),
                    Some(name.clone()),
                    ComponentKind::Class,
                ));
                if let Some(body) = def.child_by_field_name("body") {
                    let mut cursor = body.walk();
                    for stmt in body.named_children(&mut cursor) {
                        let Some(method) = definition_of(stmt) else { continue };
                        if method.kind() != "function_definition" {
                            // nested classes are folded into the enclosing class
                            continue;
                        }
                        let mname = field_text(method, "name", src);
                        components.push(build_component(
                            stmt,
                            method,
                            src,
                            &scope,
                            format!("{name}.{mname}"),
                            Some(name.clone()),
                            ComponentKind::Method,
                        ));
                    }
                }
            }
            _ => {}
        }
    }

    let mentions_configuration = ["os.environ", "getenv(", "argparse", "configparser", "dotenv"]
        .iter()
        .any(|needle| text.contains(needle));
    let declares_extension_points = ["abstractmethod", "(ABC)", "ABCMeta", "(Protocol)", "entry_points"]
        .iter()
        .any(|needle| text.contains(needle));

    Ok(ParsedFile {
        scope,
        imports,
        components,
        mentions_configuration,
        declares_extension_points,
    })
}

fn first_error_line(node: Node) -> Option<usize> {
    if node.is_error() || node.is_missing() {
        return Some(node.start_position().row + 1);
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        if child.has_error() {
            if let Some(line) = first_error_line(child) {
                return Some(line);
            }
        }
    }
    None
}

/// `def`/`class` node behind an optional decorator wrapper.
fn definition_of(node: Node) -> Option<Node> {
    match node.kind() {
        "function_definition" | "class_definition" => Some(node),
        "decorated_definition" => node.child_by_field_name("definition"),
        _ => None,
    }
}

fn collect_top_level<'t>(
    block: Node<'t>,
    src: &[u8],
    scope: &mut FileScope,
    imports: &mut Vec<String>,
    defs: &mut Vec<(Node<'t>, Node<'t>)>,
) {
    let mut cursor = block.walk();
    for node in block.named_children(&mut cursor) {
        match node.kind() {
            "import_statement" | "import_from_statement" | "future_import_statement" => {
                imports.push(text_of(node, src).to_string());
                import_bindings(node, src, &scope.package, &mut scope.bindings);
            }
            "function_definition" | "class_definition" | "decorated_definition" => {
                if let Some(def) = definition_of(node) {
                    scope.top_level.insert(field_text(def, "name", src));
                    defs.push((node, def));
                }
            }
            // guarded imports (`try: import x`, `if TYPE_CHECKING:`) still bind names
            "if_statement" | "try_statement" | "else_clause" | "elif_clause" | "except_clause"
            | "finally_clause" | "block" => {
                collect_imports_only(node, src, scope, imports);
            }
            _ => {}
        }
    }
}

fn collect_imports_only(node: Node, src: &[u8], scope: &mut FileScope, imports: &mut Vec<String>) {
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        match child.kind() {
            "import_statement" | "import_from_statement" => {
                imports.push(text_of(child, src).to_string());
                import_bindings(child, src, &scope.package, &mut scope.bindings);
            }
            "function_definition" | "class_definition" | "decorated_definition" => {}
            _ => collect_imports_only(child, src, scope, imports),
        }
    }
}

fn import_bindings(node: Node, src: &[u8], package: &str, out: &mut Vec<ImportBinding>) {
    let mut cursor = node.walk();
    match node.kind() {
        "import_statement" => {
            for name in node.children_by_field_name("name", &mut cursor) {
                match name.kind() {
                    "dotted_name" => {
                        let dotted = text_of(name, src).to_string();
                        let head = dotted.split('.').next().unwrap_or_default().to_string();
                        out.push(ImportBinding {
                            alias: head.clone(),
                            target: head,
                        });
                    }
                    "aliased_import" => {
                        let target = field_text(name, "name", src);
                        let alias = field_text(name, "alias", src);
                        out.push(ImportBinding { alias, target });
                    }
                    _ => {}
                }
            }
        }
        "import_from_statement" => {
            let Some(module_node) = node.child_by_field_name("module_name") else {
                return;
            };
            let base = match module_node.kind() {
                "relative_import" => {
                    let mut level = 0;
                    let mut tail = String::new();
                    let mut c = module_node.walk();
                    for part in module_node.named_children(&mut c) {
                        match part.kind() {
                            "import_prefix" => level = text_of(part, src).chars().filter(|&ch| ch == '.').count(),
                            "dotted_name" => tail = text_of(part, src).to_string(),
                            _ => {}
                        }
                    }
                    let mut segments: Vec<&str> = package.split('.').filter(|s| !s.is_empty()).collect();
                    for _ in 1..level {
                        segments.pop();
                    }
                    if !tail.is_empty() {
                        segments.push(&tail);
                    }
                    segments.join(".")
                }
                _ => text_of(module_node, src).to_string(),
            };
            for name in node.children_by_field_name("name", &mut cursor) {
                let (target_name, alias) = match name.kind() {
                    "dotted_name" => {
                        let t = text_of(name, src).to_string();
                        (t.clone(), t)
                    }
                    "aliased_import" => (field_text(name, "name", src), field_text(name, "alias", src)),
                    _ => continue,
                };
                let target = if base.is_empty() {
                    target_name
                } else {
                    format!("{base}.{target_name}")
                };
                out.push(ImportBinding { alias, target });
            }
        }
        _ => {}
    }
}

fn build_component(
    outer: Node,
    def: Node,
    src: &[u8],
    scope: &FileScope,
    qualname: String,
    class_qualname: Option<String>,
    kind: ComponentKind,
) -> RawComponent {
    let source = text_of(outer, src).to_string();
    let signature = match def.child_by_field_name("body") {
        Some(body) => String::from_utf8_lossy(&src[def.start_byte()..body.start_byte()])
            .trim_end()
            .to_string(),
        None => source.lines().next().unwrap_or_default().to_string(),
    };

    let mut walker = Walker::new(src, &scope.package);
    walker.visit(outer);

    let parameters = match kind {
        ComponentKind::Function | ComponentKind::Method => own_parameters(def, src),
        ComponentKind::Class => constructor_parameters(def, src),
    };
    let leaf = qualname.rsplit('.').next().unwrap_or(&qualname);
    let line_count = outer.end_position().row - outer.start_position().row + 1;
    let traits = SourceTraits {
        has_parameters: !parameters.is_empty(),
        raises: walker.raises,
        control_flow: walker.control_flow,
        side_effects: walker.side_effects,
        public: !leaf.starts_with('_'),
        nontrivial: line_count >= 5,
    };

    RawComponent {
        qualname,
        kind,
        start_line: outer.start_position().row + 1,
        end_line: outer.end_position().row + 1,
        source,
        signature,
        parameters,
        traits,
        uses: walker.uses,
        local_bindings: walker.local_bindings,
        class_qualname,
    }
}

fn own_parameters(def: Node, src: &[u8]) -> Vec<String> {
    let mut names = Vec::new();
    if let Some(params) = def.child_by_field_name("parameters") {
        let mut cursor = params.walk();
        for p in params.named_children(&mut cursor) {
            if let Some(name) = parameter_name(p, src) {
                if name != "self" && name != "cls" {
                    names.push(name);
                }
            }
        }
    }
    names
}

fn constructor_parameters(class: Node, src: &[u8]) -> Vec<String> {
    let Some(body) = class.child_by_field_name("body") else {
        return Vec::new();
    };
    let mut cursor = body.walk();
    for stmt in body.named_children(&mut cursor) {
        if let Some(def) = definition_of(stmt) {
            if def.kind() == "function_definition" && field_text(def, "name", src) == "__init__" {
                return own_parameters(def, src);
            }
        }
    }
    Vec::new()
}

fn parameter_name(p: Node, src: &[u8]) -> Option<String> {
    match p.kind() {
        "identifier" => Some(text_of(p, src).to_string()),
        "default_parameter" | "typed_default_parameter" => p
            .child_by_field_name("name")
            .and_then(|n| parameter_name(n, src)),
        "typed_parameter" | "list_splat_pattern" | "dictionary_splat_pattern" => {
            let mut cursor = p.walk();
            let first = p.named_children(&mut cursor).next();
            first.and_then(|n| parameter_name(n, src))
        }
        _ => None,
    }
}

/// Dotted chain for `a.b.c` when every link is a plain name.
fn flatten_attribute(node: Node, src: &[u8]) -> Option<Vec<String>> {
    match node.kind() {
        "identifier" => Some(vec![text_of(node, src).to_string()]),
        "attribute" => {
            let object = node.child_by_field_name("object")?;
            let attr = node.child_by_field_name("attribute")?;
            let mut chain = flatten_attribute(object, src)?;
            chain.push(text_of(attr, src).to_string());
            Some(chain)
        }
        _ => None,
    }
}

const SIDE_EFFECT_CALLS: &[&str] = &[
    "print", "open", "input", "write", "writelines", "remove", "unlink", "rmtree", "makedirs",
    "mkdir", "system", "exec", "setattr",
];

struct Walker<'s> {
    src: &'s [u8],
    package: &'s str,
    uses: Vec<NameUse>,
    local_bindings: Vec<ImportBinding>,
    raises: bool,
    control_flow: bool,
    side_effects: bool,
}

impl<'s> Walker<'s> {
    fn new(src: &'s [u8], package: &'s str) -> Self {
        Self {
            src,
            package,
            uses: Vec::new(),
            local_bindings: Vec::new(),
            raises: false,
            control_flow: false,
            side_effects: false,
        }
    }

    fn push(&mut self, chain: Vec<String>, role: Role) {
        self.uses.push(NameUse { chain, role });
    }

    fn visit_children(&mut self, node: Node) {
        let mut cursor = node.walk();
        let children: Vec<Node> = node.named_children(&mut cursor).collect();
        for child in children {
            self.visit(child);
        }
    }

    fn visit(&mut self, node: Node) {
        match node.kind() {
            "identifier" => {
                self.push(vec![text_of(node, self.src).to_string()], Role::Load);
            }
            "attribute" => match flatten_attribute(node, self.src) {
                Some(chain) => self.push(chain, Role::Load),
                None => {
                    if let Some(object) = node.child_by_field_name("object") {
                        self.visit(object);
                    }
                }
            },
            "call" => {
                if let Some(function) = node.child_by_field_name("function") {
                    match flatten_attribute(function, self.src) {
                        Some(chain) => {
                            if SIDE_EFFECT_CALLS.contains(&chain.last().map(String::as_str).unwrap_or_default()) {
                                self.side_effects = true;
                            }
                            self.push(chain, Role::Call);
                        }
                        None => self.visit(function),
                    }
                }
                if let Some(args) = node.child_by_field_name("arguments") {
                    self.visit(args);
                }
            }
            "function_definition" => {
                if let Some(name) = node.child_by_field_name("name") {
                    self.push(vec![text_of(name, self.src).to_string()], Role::Def);
                }
                if let Some(params) = node.child_by_field_name("parameters") {
                    self.visit_parameters(params);
                }
                if let Some(ret) = node.child_by_field_name("return_type") {
                    self.visit(ret);
                }
                if let Some(body) = node.child_by_field_name("body") {
                    self.visit(body);
                }
            }
            "lambda" => {
                if let Some(params) = node.child_by_field_name("parameters") {
                    self.visit_parameters(params);
                }
                if let Some(body) = node.child_by_field_name("body") {
                    self.visit(body);
                }
            }
            "class_definition" => {
                if let Some(name) = node.child_by_field_name("name") {
                    self.push(vec![text_of(name, self.src).to_string()], Role::Def);
                }
                if let Some(bases) = node.child_by_field_name("superclasses") {
                    let mut cursor = bases.walk();
                    let items: Vec<Node> = bases.named_children(&mut cursor).collect();
                    for base in items {
                        match flatten_attribute(base, self.src) {
                            Some(chain) => self.push(chain, Role::Base),
                            None => self.visit(base),
                        }
                    }
                }
                if let Some(body) = node.child_by_field_name("body") {
                    self.visit(body);
                }
            }
            "keyword_argument" => {
                if let Some(value) = node.child_by_field_name("value") {
                    self.visit(value);
                }
            }
            "import_statement" | "import_from_statement" => {
                import_bindings(node, self.src, self.package, &mut self.local_bindings);
            }
            "raise_statement" => {
                self.raises = true;
                self.visit_children(node);
            }
            "if_statement" | "for_statement" | "while_statement" | "try_statement" | "with_statement"
            | "match_statement" => {
                self.control_flow = true;
                self.visit_children(node);
            }
            "global_statement" | "nonlocal_statement" => {
                self.side_effects = true;
                self.visit_children(node);
            }
            "string" | "concatenated_string" => {
                let mut cursor = node.walk();
                let parts: Vec<Node> = node.named_children(&mut cursor).collect();
                for part in parts {
                    match part.kind() {
                        "interpolation" | "string" => self.visit(part),
                        _ => {}
                    }
                }
            }
            "comment" => {}
            _ => self.visit_children(node),
        }
    }

    fn visit_parameters(&mut self, params: Node) {
        let mut cursor = params.walk();
        let items: Vec<Node> = params.named_children(&mut cursor).collect();
        for p in items {
            if let Some(name) = parameter_name(p, self.src) {
                self.push(vec![name], Role::Param);
            }
            for field in ["type", "value"] {
                if let Some(child) = p.child_by_field_name(field) {
                    self.visit(child);
                }
            }
        }
    }
}

fn text_of<'a>(node: Node, src: &'a [u8]) -> &'a str {
    node.utf8_text(src).unwrap_or_default()
}

fn field_text(node: Node, field: &str, src: &[u8]) -> String {
    node.child_by_field_name(field)
        .map(|n| text_of(n, src).to_string())
        .unwrap_or_default()
}
