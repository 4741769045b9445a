//! Built-in task graphs used by the examples, sweeps and benchmarks.
//!
//! Twelve graphs in three categories: purely parallel sets, multi-step
//! sessions made of several independent tasks, and mixed DAGs.

use crate::taskmodel::TaskGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Parallel,
    MultiStep,
    Mixed,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Parallel => "parallel",
            Category::MultiStep => "multistep",
            Category::Mixed => "mixed",
        }
    }

    /// Category of a corpus graph id such as `multistep_office`.
    pub fn of(id: &str) -> Option<Category> {
        [Category::Parallel, Category::MultiStep, Category::Mixed]
            .into_iter()
            .find(|c| id.strip_prefix(c.name()).is_some_and(|rest| rest.starts_with('_')))
    }
}

macro_rules! graph {
    ($name:literal) => {
        ($name, include_str!(concat!("../corpus/", $name, ".json")))
    };
}

const SOURCES: [(&str, &str); 12] = [
    graph!("parallel_weather"),
    graph!("parallel_stocks"),
    graph!("parallel_trip"),
    graph!("parallel_files"),
    graph!("multistep_office"),
    graph!("multistep_vehicle"),
    graph!("multistep_travel"),
    graph!("multistep_social"),
    graph!("mixed_pasta"),
    graph!("mixed_documents"),
    graph!("mixed_florist"),
    graph!("mixed_meeting"),
];

/// All built-in graphs as `(id, graph)`, parallel first, then multi-step,
/// then mixed.
pub fn builtin() -> Vec<(String, TaskGraph)> {
    SOURCES
        .iter()
        .map(|(id, text)| {
            let g = TaskGraph::from_json(text).unwrap_or_else(|e| panic!("corpus graph {id}: {e}"));
            (id.to_string(), g)
        })
        .collect()
}

pub fn by_category(category: Category) -> Vec<(String, TaskGraph)> {
    builtin().into_iter().filter(|(id, _)| Category::of(id) == Some(category)).collect()
}
