//! XML form of the OpenDRIVE subset. Numbers are written with 17
//! significant digits so parsing recovers every f64 exactly.

use std::fmt::Write;

use diffroad_core::xodr::{validate, Elevation, Header, LineGeometry, OpenDriveDocument, XodrRoad, LANE_WIDTH_M};
use diffroad_core::OpenDriveError;
use roxmltree::{Document, Node};

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn lane(out: &mut String, id: i32, width: f64) {
    let _ = writeln!(out, "          <lane id=\"{id}\" type=\"driving\" level=\"false\">");
    let _ = writeln!(
        out,
        "            <width sOffset=\"{}\" a=\"{}\" b=\"{}\" c=\"{}\" d=\"{}\"/>",
        num(0.0),
        num(width),
        num(0.0),
        num(0.0),
        num(0.0)
    );
    let _ = writeln!(out, "          </lane>");
}

/// Refuses documents that fail [`validate`].
pub fn serialize(doc: &OpenDriveDocument) -> Result<String, OpenDriveError> {
    validate(doc)?;
    let h = &doc.header;
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<OpenDRIVE>\n");
    let _ = writeln!(
        out,
        "  <header revMajor=\"{}\" revMinor=\"{}\" name=\"{}\">",
        h.rev_major,
        h.rev_minor,
        escape(&h.name)
    );
    if let Some(g) = &h.geo_reference {
        let _ = writeln!(out, "    <geoReference>{}</geoReference>", escape(g));
    }
    for (code, value) in &h.user_data {
        let _ = writeln!(out, "    <userData code=\"{}\" value=\"{}\"/>", escape(code), escape(value));
    }
    out.push_str("  </header>\n");
    for r in &doc.roads {
        let _ = writeln!(
            out,
            "  <road id=\"{}\" name=\"{}\" length=\"{}\" junction=\"-1\">",
            escape(&r.id),
            escape(&r.name),
            num(r.length)
        );
        out.push_str("    <planView>\n");
        for g in &r.plan_view {
            let _ = writeln!(
                out,
                "      <geometry s=\"{}\" x=\"{}\" y=\"{}\" hdg=\"{}\" length=\"{}\">",
                num(g.s),
                num(g.x),
                num(g.y),
                num(g.hdg),
                num(g.length)
            );
            out.push_str("        <line/>\n      </geometry>\n");
        }
        out.push_str("    </planView>\n    <elevationProfile>\n");
        for e in &r.elevation {
            let _ = writeln!(
                out,
                "      <elevation s=\"{}\" a=\"{}\" b=\"{}\" c=\"{}\" d=\"{}\"/>",
                num(e.s),
                num(e.a),
                num(e.b),
                num(e.c),
                num(e.d)
            );
        }
        out.push_str("    </elevationProfile>\n    <lanes>\n");
        let _ = writeln!(out, "      <laneSection s=\"{}\">", num(0.0));
        out.push_str("        <left>\n");
        lane(&mut out, 1, r.lane_width);
        out.push_str("        </left>\n        <center>\n");
        out.push_str("          <lane id=\"0\" type=\"none\" level=\"false\"/>\n");
        out.push_str("        </center>\n        <right>\n");
        lane(&mut out, -1, r.lane_width);
        out.push_str("        </right>\n      </laneSection>\n    </lanes>\n  </road>\n");
    }
    out.push_str("</OpenDRIVE>\n");
    Ok(out)
}

const UNSUPPORTED: [&str; 7] = ["arc", "spiral", "paramPoly3", "poly3", "junction", "superelevation", "shape"];

fn line(n: Node) -> u32 {
    n.document().text_pos_at(n.range().start).row
}

fn attr<'a>(n: Node<'a, '_>, name: &str) -> Result<&'a str, OpenDriveError> {
    n.attribute(name).ok_or_else(|| OpenDriveError::MissingAttribute {
        element: n.tag_name().name().into(),
        attribute: name.into(),
        line: line(n),
    })
}

fn number(n: Node, name: &str) -> Result<f64, OpenDriveError> {
    let raw = attr(n, name)?;
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| OpenDriveError::InvalidNumber {
            element: n.tag_name().name().into(),
            attribute: name.into(),
            value: raw.into(),
            line: line(n),
        })
}

fn child<'a, 'i>(n: Node<'a, 'i>, tag: &str, context: &str) -> Result<Node<'a, 'i>, OpenDriveError> {
    n.children()
        .find(|c| c.has_tag_name(tag))
        .ok_or_else(|| OpenDriveError::MissingElement {
            element: tag.into(),
            context: context.into(),
        })
}

fn elements<'a, 'i: 'a>(n: Node<'a, 'i>, tag: &'a str) -> impl Iterator<Item = Node<'a, 'i>> + 'a {
    n.children().filter(move |c| c.has_tag_name(tag))
}

fn lane_width(road: Node, context: &str) -> Result<f64, OpenDriveError> {
    let Some(lanes) = road.children().find(|c| c.has_tag_name("lanes")) else {
        return Ok(LANE_WIDTH_M);
    };
    let mut sections = elements(lanes, "laneSection");
    let Some(section) = sections.next() else {
        return Err(OpenDriveError::MissingElement {
            element: "laneSection".into(),
            context: context.into(),
        });
    };
    if let Some(extra) = sections.next() {
        return Err(OpenDriveError::Unsupported {
            element: "laneSection".into(),
            line: line(extra),
        });
    }
    let width = section
        .descendants()
        .find(|d| d.has_tag_name("lane") && d.attribute("id") == Some("-1"))
        .and_then(|l| l.children().find(|c| c.has_tag_name("width")));
    match width {
        Some(w) => number(w, "a"),
        None => Ok(LANE_WIDTH_M),
    }
}

/// Parses the exporter's subset and checks the document invariants.
pub fn parse_opendrive(text: &str) -> Result<OpenDriveDocument, OpenDriveError> {
    let doc = Document::parse(text).map_err(|e| OpenDriveError::Malformed {
        line: e.pos().row,
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if !root.has_tag_name("OpenDRIVE") {
        return Err(OpenDriveError::Malformed {
            line: line(root),
            message: format!("root element is <{}>, expected <OpenDRIVE>", root.tag_name().name()),
        });
    }
    if let Some(bad) = root.descendants().find(|d| d.is_element() && UNSUPPORTED.contains(&d.tag_name().name())) {
        return Err(OpenDriveError::Unsupported {
            element: bad.tag_name().name().into(),
            line: line(bad),
        });
    }

    let hn = child(root, "header", "OpenDRIVE")?;
    let header = Header {
        rev_major: number(hn, "revMajor")? as u16,
        rev_minor: number(hn, "revMinor")? as u16,
        name: hn.attribute("name").unwrap_or_default().to_string(),
        geo_reference: hn
            .children()
            .find(|c| c.has_tag_name("geoReference"))
            .map(|g| g.text().unwrap_or_default().to_string()),
        user_data: elements(hn, "userData")
            .map(|u| Ok((attr(u, "code")?.to_string(), attr(u, "value")?.to_string())))
            .collect::<Result<_, OpenDriveError>>()?,
    };

    let mut roads = Vec::new();
    for rn in elements(root, "road") {
        let id = attr(rn, "id")?.to_string();
        let context = format!("road {id}");
        let pv = child(rn, "planView", &context)?;
        let mut plan_view = Vec::new();
        for g in elements(pv, "geometry") {
            let kind = g.children().find(|c| c.is_element()).ok_or_else(|| OpenDriveError::MissingElement {
                element: "line".into(),
                context: format!("geometry at line {}", line(g)),
            })?;
            if !kind.has_tag_name("line") {
                return Err(OpenDriveError::Unsupported {
                    element: kind.tag_name().name().into(),
                    line: line(kind),
                });
            }
            plan_view.push(LineGeometry {
                s: number(g, "s")?,
                x: number(g, "x")?,
                y: number(g, "y")?,
                hdg: number(g, "hdg")?,
                length: number(g, "length")?,
            });
        }
        let mut elevation = Vec::new();
        if let Some(ep) = rn.children().find(|c| c.has_tag_name("elevationProfile")) {
            for e in elements(ep, "elevation") {
                elevation.push(Elevation {
                    s: number(e, "s")?,
                    a: number(e, "a")?,
                    b: number(e, "b")?,
                    c: number(e, "c")?,
                    d: number(e, "d")?,
                });
            }
        }
        roads.push(XodrRoad {
            name: rn.attribute("name").unwrap_or_default().to_string(),
            length: number(rn, "length")?,
            lane_width: lane_width(rn, &context)?,
            id,
            plan_view,
            elevation,
        });
    }
    let out = OpenDriveDocument { header, roads };
    validate(&out)?;
    Ok(out)
}
