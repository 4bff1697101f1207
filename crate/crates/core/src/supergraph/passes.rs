//! Passes run over the built graph: linking functions to methods and
//! marking entry points.

use std::collections::{BTreeMap, BTreeSet};

use super::{EdgeLabel, Label, NodeId, PropertyGraph, Props, Value};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassReport {
    pub inserted: usize,
    pub updated: usize,
    pub warnings: Vec<String>,
}

/// Inserts `implements` edges from each function to the methods implemented
/// at its address, and gives synthetic `sub_<hex>` functions the method's
/// signature as name. Running it twice changes nothing.
pub fn link_pass(g: &mut PropertyGraph) -> PassReport {
    let mut report = PassReport::default();
    let methods: Vec<NodeId> = g.nodes_with_label(Label::Method).to_vec();
    for m in methods {
        let node = g.node(m).unwrap();
        let Some(imp) = node.int("imp") else { continue };
        let sign = if node.flag("is_class_method") { '+' } else { '-' };
        let signature = format!("{sign}[{} {}]", node.text("class").unwrap_or("?"), node.name().unwrap_or("?"));
        let func = g
            .find(Label::Function, "ea", &Value::Int(imp))
            .into_iter()
            .find(|f| !g.node(*f).unwrap().flag("is_ext"));
        let Some(f) = func else {
            report.warnings.push(format!("{signature} is implemented at {imp:#x}, where no function starts"));
            continue;
        };
        if !g.in_neighbors(m, EdgeLabel::Implements).any(|x| x == f) {
            g.add_labeled_edge(f, m, EdgeLabel::Implements, Props::new()).expect("Function to Method");
            report.inserted += 1;
        }
        let synthetic = g.node(f).unwrap().name().is_none_or(|n| n.starts_with("sub_"));
        if synthetic {
            g.set_property(f, "name", Value::Text(signature)).expect("name is text");
            report.updated += 1;
        }
    }
    report
}

/// Which adopted protocols make a method an entry point, and with which selectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntrypointConfig {
    /// Protocol name -> selectors invoked by the system. Selectors declared by
    /// the protocol in the binary itself count as well.
    pub protocols: BTreeMap<String, Vec<String>>,
}

impl Default for EntrypointConfig {
    fn default() -> Self {
        let table: &[(&str, &[&str])] = &[
            (
                "UIApplicationDelegate",
                &[
                    "application:didFinishLaunchingWithOptions:",
                    "application:willFinishLaunchingWithOptions:",
                    "applicationDidBecomeActive:",
                    "applicationWillResignActive:",
                    "applicationDidEnterBackground:",
                    "applicationWillEnterForeground:",
                    "applicationWillTerminate:",
                    "application:openURL:options:",
                    "application:openURL:sourceApplication:annotation:",
                    "application:handleOpenURL:",
                    "application:continueUserActivity:restorationHandler:",
                    "application:didReceiveRemoteNotification:fetchCompletionHandler:",
                ],
            ),
            (
                "UIWebViewDelegate",
                &[
                    "webView:shouldStartLoadWithRequest:navigationType:",
                    "webViewDidStartLoad:",
                    "webViewDidFinishLoad:",
                    "webView:didFailLoadWithError:",
                ],
            ),
            (
                "WKNavigationDelegate",
                &[
                    "webView:decidePolicyForNavigationAction:decisionHandler:",
                    "webView:decidePolicyForNavigationResponse:decisionHandler:",
                    "webView:didStartProvisionalNavigation:",
                    "webView:didFinishNavigation:",
                ],
            ),
            ("WKScriptMessageHandler", &["userContentController:didReceiveScriptMessage:"]),
            ("UISceneDelegate", &["scene:willConnectToSession:options:", "scene:openURLContexts:"]),
            ("UIWindowSceneDelegate", &["scene:willConnectToSession:options:", "scene:openURLContexts:"]),
        ];
        EntrypointConfig {
            protocols: table
                .iter()
                .map(|(p, sels)| (p.to_string(), sels.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }
}

/// Protocol nodes adopted by a class, through protocol inheritance and superclasses.
fn adopted(g: &PropertyGraph, class: NodeId) -> BTreeSet<NodeId> {
    let mut classes = vec![class];
    let mut seen_classes = BTreeSet::new();
    let mut stack = Vec::new();
    while let Some(c) = classes.pop() {
        if seen_classes.insert(c) {
            stack.extend(g.out_neighbors(c, EdgeLabel::HasProtocol));
            classes.extend(g.out_neighbors(c, EdgeLabel::HasSuperclass));
        }
    }
    let mut out = BTreeSet::new();
    while let Some(p) = stack.pop() {
        if out.insert(p) {
            stack.extend(g.out_neighbors(p, EdgeLabel::HasProtocol));
        }
    }
    out
}

/// Sets `is_ep` on `main`, exported functions, and implementations of
/// system-invoked delegate methods.
pub fn mark_entrypoints(g: &mut PropertyGraph, config: &EntrypointConfig) -> PassReport {
    let mut report = PassReport::default();
    let mut eps = BTreeSet::new();
    for &f in g.nodes_with_label(Label::Function) {
        let n = g.node(f).unwrap();
        if !n.flag("is_ext") && (n.name() == Some("main") || n.flag("exported")) {
            eps.insert(f);
        }
    }
    for &c in g.nodes_with_label(Label::Class) {
        let node = g.node(c).unwrap();
        if node.flag("is_meta") || node.flag("is_ext") {
            continue;
        }
        let mut selectors: BTreeSet<&str> = BTreeSet::new();
        for p in adopted(g, c) {
            let Some(name) = g.node(p).unwrap().name() else { continue };
            let Some(configured) = config.protocols.get(name) else { continue };
            selectors.extend(configured.iter().map(String::as_str));
            selectors.extend(g.out_neighbors(p, EdgeLabel::HasMeth).filter_map(|m| g.node(m).unwrap().name()));
        }
        for m in g.out_neighbors(c, EdgeLabel::HasMeth) {
            if g.node(m).unwrap().name().is_some_and(|s| selectors.contains(s)) {
                eps.extend(g.in_neighbors(m, EdgeLabel::Implements));
            }
        }
    }
    for f in eps {
        if !g.node(f).unwrap().flag("is_ep") {
            g.set_property(f, "is_ep", Value::Bool(true)).expect("is_ep is boolean");
            report.updated += 1;
        }
    }
    report
}
