//! Network serialization backends: the canonical JSON read by trainers, and a text
//! template backend that writes model source.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{count_resources, CodegenError, MacroConfig, NetNode, NetworkGraph, ResourceCount};
use crate::dsl::OpKind;
use crate::validate::{same_padding, Shape};

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedFile {
    /// Relative to the architecture's output directory.
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn emit(&self, net: &NetworkGraph) -> Result<Vec<EmittedFile>, CodegenError>;
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    id: usize,
    op: String,
    args: Map<String, Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    batch_args: BTreeMap<String, String>,
    inputs: Vec<usize>,
    section: String,
    shape: Shape,
}

#[derive(Serialize, Deserialize)]
struct JsonNetwork {
    schema_version: u32,
    #[serde(rename = "macro")]
    macro_config: MacroConfig,
    width: i64,
    nodes: Vec<JsonNode>,
    edges: Vec<(usize, usize)>,
    resources: ResourceCount,
}

/// The canonical network document, `network.json`.
pub struct JsonBackend;

impl JsonBackend {
    pub fn to_json(net: &NetworkGraph) -> String {
        let doc = JsonNetwork {
            schema_version: NETWORK_SCHEMA_VERSION,
            macro_config: net.macro_config,
            width: net.width,
            nodes: net
                .nodes
                .iter()
                .map(|n| JsonNode {
                    id: n.id,
                    op: n.op.name().to_string(),
                    args: n.args.iter().map(|(k, v)| (k.clone(), Value::from(*v))).collect(),
                    batch_args: n.batch_args.clone(),
                    inputs: n.inputs.clone(),
                    section: n.section.clone(),
                    shape: n.shape.clone(),
                })
                .collect(),
            edges: net.edges(),
            resources: count_resources(net),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("network serializes");
        text.push('\n');
        text
    }

    /// Parses and re-checks a network document; returns it with its recorded resources.
    pub fn from_json(text: &str) -> Result<(NetworkGraph, ResourceCount), CodegenError> {
        let doc: JsonNetwork = serde_json::from_str(text).map_err(|e| CodegenError::Json(e.to_string()))?;
        if doc.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(CodegenError::Json(format!("unsupported schema version {}", doc.schema_version)));
        }
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for n in doc.nodes {
            let op = OpKind::from_name(&n.op).ok_or_else(|| CodegenError::Json(format!("node {}: unknown op {}", n.id, n.op)))?;
            let args = n
                .args
                .into_iter()
                .map(|(k, v)| v.as_i64().map(|v| (k.clone(), v)).ok_or_else(|| CodegenError::Json(format!("node {}: arg {k} is not an integer", n.id))))
                .collect::<Result<Vec<_>, _>>()?;
            nodes.push(NetNode { id: n.id, op, args, batch_args: n.batch_args, inputs: n.inputs, section: n.section, shape: n.shape });
        }
        let net = NetworkGraph { nodes, width: doc.width, macro_config: doc.macro_config };
        net.check()?;
        if net.edges() != doc.edges {
            return Err(CodegenError::Json("edge list disagrees with node inputs".into()));
        }
        Ok((net, doc.resources))
    }
}

impl Backend for JsonBackend {
    fn id(&self) -> &str {
        "json"
    }

    fn emit(&self, net: &NetworkGraph) -> Result<Vec<EmittedFile>, CodegenError> {
        Ok(vec![EmittedFile { path: PathBuf::from("network.json"), bytes: JsonBackend::to_json(net).into_bytes() }])
    }
}

/// Per-op text templates. `{name}` placeholders are filled from the node: its arguments
/// by name, `{id}`, `{x}` (first operand), `{in_c}` and `{in_last}` (operand channel and
/// last dimension), `{pad}` (same padding), `{dims}` (variadic values), and operand joins
/// `{xs}`, `{xs_add}`, `{xs_mul}`, `{xs_matmul}`.
#[derive(Debug, Clone)]
pub struct OpTemplate {
    /// Constructor for a stateful layer, if the op has one.
    pub layer: Option<&'static str>,
    /// Expression computing the node's value.
    pub value: &'static str,
}

pub struct TemplateBackend {
    pub id: String,
    pub file: PathBuf,
    pub header: String,
    /// Prefix for each layer declaration line.
    pub layer_line: &'static str,
    pub forward_header: String,
    pub value_line: &'static str,
    pub footer: &'static str,
    pub templates: BTreeMap<OpKind, OpTemplate>,
    /// Maps a batch-only expression to the target language.
    pub batch_expr: fn(&str) -> String,
}

fn fill(template: &str, slots: &BTreeMap<&str, String>) -> Result<String, CodegenError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').ok_or_else(|| CodegenError::Json(format!("unclosed placeholder in {template}")))?;
        let key = &rest[start + 1..start + end];
        let value = slots.get(key).ok_or_else(|| CodegenError::Json(format!("template needs {{{key}}}")))?;
        out.push_str(value);
        rest = &rest[start + end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl TemplateBackend {
    /// PyTorch module source, `model.py`.
    pub fn torch() -> TemplateBackend {
        let t = |layer: Option<&'static str>, value: &'static str| OpTemplate { layer, value };
        let layer_value = "self.m{id}({x})";
        let templates = BTreeMap::from([
            (OpKind::Conv2d, t(Some("nn.Conv2d({in_c}, {out_channels}, {kernel_size}, stride={stride}, padding={pad}, dilation={dilation}, groups={groups}, bias=False)"), layer_value)),
            (OpKind::Linear, t(Some("nn.Linear({in_last}, {out_channels})"), layer_value)),
            (OpKind::AvgPool2d, t(Some("nn.AvgPool2d({kernel_size}, stride={stride})"), layer_value)),
            (OpKind::MaxPool2d, t(Some("nn.MaxPool2d({kernel_size}, stride={stride})"), layer_value)),
            (OpKind::AdaptiveAvgPool2d, t(Some("nn.AdaptiveAvgPool2d({output_size})"), layer_value)),
            (OpKind::AdaptiveMaxPool2d, t(Some("nn.AdaptiveMaxPool2d({output_size})"), layer_value)),
            (OpKind::BN, t(Some("nn.BatchNorm2d({in_c})"), layer_value)),
            (OpKind::LN, t(Some("nn.LayerNorm({in_last})"), layer_value)),
            (OpKind::ReLU, t(Some("nn.ReLU()"), layer_value)),
            (OpKind::GELU, t(Some("nn.GELU()"), layer_value)),
            (OpKind::Sigmoid, t(Some("nn.Sigmoid()"), layer_value)),
            (OpKind::Add, t(None, "{xs_add}")),
            (OpKind::Mul, t(None, "{xs_mul}")),
            (OpKind::Multiply, t(None, "{xs_matmul}")),
            (OpKind::Concat, t(None, "torch.cat([{xs}], dim={dim})")),
            (OpKind::Mean, t(None, "{x}.mean(dim={dim}, keepdim=True)")),
            (OpKind::Max, t(None, "{x}.amax(dim={dim}, keepdim=True)")),
            (OpKind::Sum, t(None, "{x}.sum(dim={dim}, keepdim=True)")),
            (OpKind::Softmax, t(None, "torch.softmax({x}, dim={dim})")),
            (OpKind::Permute, t(None, "{x}.permute({dims})")),
            (OpKind::Repeat, t(None, "{x}.repeat({dims})")),
            (OpKind::Reshape, t(None, "{x}.reshape({dims})")),
            (OpKind::Output, t(None, "{x}")),
        ]);
        TemplateBackend {
            id: "torch".into(),
            file: PathBuf::from("model.py"),
            header: "import torch\nfrom torch import nn\n\n\nclass Network(nn.Module):\n    def __init__(self):\n        super().__init__()\n".into(),
            layer_line: "        self.m{id} = {layer}\n",
            forward_header: "\n    def forward(self, x):\n        B = x.shape[0]\n        x0 = x\n".into(),
            value_line: "        x{id} = {value}\n",
            footer: "        return x{id}\n",
            templates,
            batch_expr: |e| e.replace('/', "//"),
        }
    }

    fn slots(&self, net: &NetworkGraph, node: &NetNode) -> BTreeMap<&'static str, String> {
        let vars: Vec<String> = node.inputs.iter().map(|i| format!("x{i}")).collect();
        let mut slots: BTreeMap<&'static str, String> = BTreeMap::new();
        slots.insert("id", node.id.to_string());
        if let Some(&first) = node.inputs.first() {
            let shape = &net.nodes[first].shape;
            slots.insert("x", vars[0].clone());
            if shape.rank() > 1 {
                slots.insert("in_c", shape.0[1].to_string());
            }
            slots.insert("in_last", shape.0.last().map_or_else(String::new, ToString::to_string));
        }
        slots.insert("xs", vars.join(", "));
        slots.insert("xs_add", vars.join(" + "));
        slots.insert("xs_mul", vars.join(" * "));
        let matmul = vars[1.min(vars.len())..].iter().fold(vars.first().cloned().unwrap_or_default(), |acc, v| format!("torch.matmul({acc}, {v})"));
        slots.insert("xs_matmul", matmul);
        let value_of = |(key, v): &(String, i64)| match node.batch_args.get(key) {
            Some(expr) => (self.batch_expr)(expr),
            None => v.to_string(),
        };
        for arg in &node.args {
            if let Some(param) = node.op.spec().params.iter().find(|p| p.name == arg.0) {
                slots.insert(param.name, value_of(arg));
            }
        }
        if node.op.spec().variadic {
            slots.insert("dims", node.args.iter().map(value_of).collect::<Vec<_>>().join(", "));
        }
        if node.op == OpKind::Conv2d {
            slots.insert("pad", same_padding(node.args[1].1, node.args[3].1).to_string());
        }
        slots
    }
}

impl Backend for TemplateBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn emit(&self, net: &NetworkGraph) -> Result<Vec<EmittedFile>, CodegenError> {
        let mut layers = String::new();
        let mut forward = String::new();
        let mut result = 0;
        for node in net.nodes.iter().skip(1) {
            let template = self
                .templates
                .get(&node.op)
                .ok_or_else(|| CodegenError::UnknownBackend(format!("{} has no template for {}", self.id, node.op)))?;
            let mut slots = self.slots(net, node);
            if let Some(layer) = template.layer {
                slots.insert("layer", fill(layer, &slots)?);
                layers.push_str(&fill(self.layer_line, &slots)?);
            }
            slots.insert("value", fill(template.value, &slots)?);
            forward.push_str(&fill(self.value_line, &slots)?);
            result = node.id;
        }
        let footer = fill(self.footer, &BTreeMap::from([("id", result.to_string())]))?;
        let source = format!("{}{layers}{}{forward}{footer}", self.header, self.forward_header);
        Ok(vec![EmittedFile { path: self.file.clone(), bytes: source.into_bytes() }])
    }
}

pub struct BackendRegistry {
    backends: BTreeMap<String, Box<dyn Backend>>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut registry = BackendRegistry { backends: BTreeMap::new() };
        registry.register(Box::new(JsonBackend));
        registry.register(Box::new(TemplateBackend::torch()));
        registry
    }
}

impl BackendRegistry {
    pub fn register(&mut self, backend: Box<dyn Backend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn ids(&self) -> Vec<&str> {
        self.backends.keys().map(String::as_str).collect()
    }

    pub fn emit(&self, net: &NetworkGraph, backend: &str) -> Result<Vec<EmittedFile>, CodegenError> {
        self.backends.get(backend).ok_or_else(|| CodegenError::UnknownBackend(backend.to_string()))?.emit(net)
    }
}

/// Emits with one of the built-in backends, `json` or `torch`.
pub fn emit(net: &NetworkGraph, backend: &str) -> Result<Vec<EmittedFile>, CodegenError> {
    BackendRegistry::default().emit(net, backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::assemble;
    use crate::dsl::parse_block;

    const RESNET: &str = "##cell##\n0:input\n1:Conv2d(C,3)\n2:BN\n3:ReLU\n4:Conv2d(C,3)\n5:BN\n6:Add\n7:ReLU\n8:output\n0->1\n1->2\n2->3\n3->4\n4->5\n5->6\n0->6\n6->7\n7->8";
    const STEM: &str = "##stem##\n0:input\n1:Conv2d(dim,3,2)\n2:BN\n3:ReLU\n4:output\n0->1\n1->2\n2->3\n3->4";
    const DOWN: &str = "##downsample##\n0:input\n1:Conv2d(dim,3,2)\n2:BN\n3:output\n0->1\n1->2\n2->3";

    fn net() -> NetworkGraph {
        assemble(&parse_block(RESNET).unwrap(), &parse_block(STEM).unwrap(), &parse_block(DOWN).unwrap(), &MacroConfig::default(), 16).unwrap()
    }

    #[test]
    fn json_round_trip() {
        let net = net();
        let text = JsonBackend::to_json(&net);
        let (back, recorded) = JsonBackend::from_json(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(recorded, count_resources(&net));
    }

    #[test]
    fn torch_source_mentions_every_layer() {
        let files = emit(&net(), "torch").unwrap();
        let source = String::from_utf8(files[0].bytes.clone()).unwrap();
        assert!(source.contains("self.m1 = nn.Conv2d(3, 16, 3, stride=2, padding=1, dilation=1, groups=1, bias=False)"));
        assert!(source.contains("nn.Linear(64, 10)"));
        assert!(source.contains(".reshape(-1, 64)"));
        assert!(source.trim_end().ends_with(&format!("return x{}", net().nodes.len() - 1)));
    }

    #[test]
    fn unknown_backend() {
        assert!(matches!(emit(&net(), "onnx"), Err(CodegenError::UnknownBackend(_))));
    }
}
