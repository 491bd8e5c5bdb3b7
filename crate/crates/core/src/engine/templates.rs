//! Versioned prompt templates. Task configs pick one; the template name
//! is recorded in traces so runs stay reproducible.

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    SingleHop,
    MultiHop,
}

const SINGLE_HOP_V1: &str = include_str!("../../assets/single_hop_v1.txt");
const MULTI_HOP_V1: &str = include_str!("../../assets/multi_hop_v1.txt");

impl TemplateKind {
    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::SingleHop => "single_hop_v1",
            TemplateKind::MultiHop => "multi_hop_v1",
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateKind::SingleHop => SINGLE_HOP_V1,
            TemplateKind::MultiHop => MULTI_HOP_V1,
        }
    }

    pub fn render(self, question: &str) -> String {
        self.body().replace("{question}", question)
    }

    pub fn parse_label(s: &str) -> Option<TemplateKind> {
        match s {
            "single-hop" | "single_hop" => Some(TemplateKind::SingleHop),
            "multi-hop" | "multi_hop" => Some(TemplateKind::MultiHop),
            _ => None,
        }
    }
}
