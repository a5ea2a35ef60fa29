//! The watch-list/listing example graph used across the test suites and the
//! demo CLI: one watch-list vertex (id 10) with 50 "includes" edges to
//! listings, 30 of them active, 25 of those pointing at available (Status=0)
//! listings.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::graphstore::{EdgeId, Graph, Properties, Scalar, VertexId};
use crate::kvstore::{Mode, Store};
use crate::templates::{Matcher, Predicate, PropTerm, SubQueryTemplate};
use crate::graphstore::Direction;

pub const WATCH_LIST: VertexId = VertexId(10);
pub const LISTING_15: VertexId = VertexId(15);

/// Listing ids are 11..=60: 11..=40 active, of which 11..=35 have Status=0.
/// Inactive listings 41..=50 have Status=0 and 51..=60 have Status=1, so all
/// four (IsActive, Status) combinations occur.
pub fn fig1() -> (Arc<Graph>, BTreeMap<VertexId, EdgeId>) {
    let graph = Graph::new(Store::open());
    let mut edges = BTreeMap::new();
    let mut tx = graph.begin(Mode::ReadWrite);
    for _ in 0..9 {
        graph.add_vertex(&mut tx, "filler", Properties::new()).unwrap();
    }
    let root = graph
        .add_vertex(
            &mut tx,
            "watch-list",
            [("name".to_string(), Scalar::Str("BF To-Buys".into()))].into_iter().collect(),
        )
        .unwrap();
    assert_eq!(root, WATCH_LIST);
    for i in 0..50u64 {
        let active = i < 30;
        let status = if active { i64::from(i >= 25) } else { i64::from(i >= 40) };
        let listing = graph
            .add_vertex(
                &mut tx,
                "listing",
                [("Status".to_string(), Scalar::Int(status))].into_iter().collect(),
            )
            .unwrap();
        let edge = graph
            .add_edge(
                &mut tx,
                root,
                listing,
                "includes",
                [("IsActive".to_string(), Scalar::Bool(active))].into_iter().collect(),
            )
            .unwrap();
        edges.insert(listing, edge.id);
    }
    tx.commit().unwrap();
    (graph, edges)
}

/// The canonical SQ1 template: watch-list roots, outgoing "includes" edges
/// with a wildcard IsActive, leaf listings with a wildcard Status.
pub fn sq1() -> SubQueryTemplate {
    SubQueryTemplate::new(
        "SQ1",
        Predicate::new(Some("watch-list"), vec![]),
        Predicate::new(
            Some("includes"),
            vec![PropTerm { name: "IsActive".into(), matcher: Matcher::Wildcard }],
        ),
        Predicate::new(None, vec![PropTerm { name: "Status".into(), matcher: Matcher::Wildcard }]),
        Direction::Out,
    )
    .unwrap()
}
