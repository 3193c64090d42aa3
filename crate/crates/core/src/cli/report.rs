use crate::survival::{kaplan_meier, logrank_test, stratify_by_median, KmCurve, LogrankResult, SurvivalError};

/// Median split of a cohort by risk with per-group survival curves.
#[derive(Clone, Debug)]
pub struct Stratification {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
    pub km_high: Option<KmCurve>,
    pub km_low: Option<KmCurve>,
    /// `None` when a group is empty or neither group has an event.
    pub logrank: Option<LogrankResult>,
}

impl Stratification {
    /// Patients above the median risk form the high group; ties at the
    /// median go low, so equal risks leave the high group empty.
    pub fn new(risks: &[f64], times: &[f64], censors: &[u8]) -> Result<Self, SurvivalError> {
        let (high, low) = stratify_by_median(risks);
        let group = |idx: &[usize]| -> (Vec<f64>, Vec<bool>) {
            (idx.iter().map(|&i| times[i]).collect(), idx.iter().map(|&i| censors[i] == 0).collect())
        };
        let (th, eh) = group(&high);
        let (tl, el) = group(&low);
        let km = |t: &[f64], e: &[bool]| if t.is_empty() { Ok(None) } else { kaplan_meier(t, e).map(Some) };
        let logrank = if high.is_empty() || low.is_empty() {
            None
        } else {
            match logrank_test((&th, &eh), (&tl, &el)) {
                Ok(r) => Some(r),
                Err(SurvivalError::NoEvents) => None,
                Err(e) => return Err(e),
            }
        };
        Ok(Self { km_high: km(&th, &eh)?, km_low: km(&tl, &el)?, high, low, logrank })
    }

    pub fn summary(&self) -> String {
        let mut s = format!("high_risk_n = {}\nlow_risk_n = {}\n", self.high.len(), self.low.len());
        match &self.logrank {
            Some(r) => s.push_str(&format!("logrank_chi2 = {}\nlogrank_p = {}\n", r.chi2, r.p_value)),
            None => s.push_str("logrank_chi2 = not applicable\nlogrank_p = not applicable\n"),
        }
        s
    }

    fn curves(&self) -> impl Iterator<Item = (&'static str, usize, &KmCurve)> {
        [("high", self.high.len(), &self.km_high), ("low", self.low.len(), &self.km_low)]
            .into_iter()
            .filter_map(|(g, n, c)| c.as_ref().map(|c| (g, n, c)))
    }
}

/// `group,time,survival,at_risk,events`, starting each curve at time 0.
pub fn km_csv(s: &Stratification) -> String {
    let mut out = String::from("group,time,survival,at_risk,events\n");
    for (g, n, c) in s.curves() {
        out.push_str(&format!("{g},0,1,{n},0\n"));
        for i in 0..c.times.len() {
            out.push_str(&format!("{g},{},{},{},{}\n", c.times[i], c.survival[i], c.at_risk[i], c.events[i]));
        }
    }
    out
}

/// Step-function plot of both curves with axes and a legend.
pub fn km_svg(s: &Stratification, t_max: f64) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let t_max = if t_max > 0.0 { t_max } else { 1.0 };
    let x = |t: f64| left + pw * (t / t_max).clamp(0.0, 1.0);
    let y = |v: f64| top + ph * (1.0 - v);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    svg.push_str(&format!("<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    svg.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + ph,
        left + pw,
        top + ph,
        top + ph
    ));
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{left}\" y2=\"{y:.1}\" stroke=\"black\"/><text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{v:.1}</text>\n",
            left - 4.0,
            left - 6.0,
            y(v) + 4.0,
            y = y(v)
        ));
        let t = t_max * v;
        svg.push_str(&format!(
            "<line x1=\"{xt:.1}\" y1=\"{}\" x2=\"{xt:.1}\" y2=\"{}\" stroke=\"black\"/><text x=\"{xt:.1}\" y=\"{}\" text-anchor=\"middle\">{t:.2}</text>\n",
            top + ph,
            top + ph + 4.0,
            top + ph + 18.0,
            xt = x(t)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">time</text>\n<text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">survival</text>\n",
        left + pw / 2.0,
        h - 10.0,
        top + ph / 2.0,
        top + ph / 2.0
    ));
    for (k, (g, n, c)) in s.curves().enumerate() {
        let color = if g == "high" { "#c0392b" } else { "#2471a3" };
        let mut pts = vec![(x(0.0), y(1.0))];
        let mut prev = 1.0;
        for i in 0..c.times.len() {
            pts.push((x(c.times[i]), y(prev)));
            pts.push((x(c.times[i]), y(c.survival[i])));
            prev = c.survival[i];
        }
        pts.push((x(t_max), y(prev)));
        let pts: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = top + 10.0 + 16.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{g} risk (n={n})</text>\n",
            left + pw - 130.0,
            left + pw - 110.0,
            left + pw - 104.0,
            ly + 4.0
        ));
    }
    let title = match &s.logrank {
        Some(r) => format!("logrank p = {:.3e}", r.p_value),
        None => "logrank not applicable".to_string(),
    };
    svg.push_str(&format!("<text x=\"{left}\" y=\"18\">{title}</text>\n</svg>\n"));
    svg
}
