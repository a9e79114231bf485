#include "cqte/panel.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace cqte {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

long parse_long(const std::string& s, int row, const char* what) {
  try {
    size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("row " + std::to_string(row) + ": bad " +
                          std::string(what) + " value '" + s + "'");
  }
}

double parse_double(const std::string& s, int row, const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("row " + std::to_string(row) + ": bad " +
                          std::string(what) + " value '" + s + "'");
  }
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct RawRow {
  long day, time, region;
  int action;
  double outcome;
  std::vector<double> state;
  int line_no;
};

// Shared scanner for both schemas. `spatial` toggles the region column.
std::vector<RawRow> scan_rows(const std::string& path, bool spatial, int* d_out) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header = split(line, ',');
  std::vector<std::string> expect = {"day", "time"};
  if (spatial) expect.push_back("region");
  expect.push_back("action");
  expect.push_back("outcome");
  size_t fixed = expect.size();
  if (header.size() <= fixed)
    throw ValidationError("'" + path + "': header has no state columns");
  for (size_t k = 0; k < fixed; ++k)
    if (header[k] != expect[k])
      throw ValidationError("'" + path + "': expected header column '" +
                            expect[k] + "', got '" + header[k] + "'");
  int d = static_cast<int>(header.size() - fixed);
  for (int v = 0; v < d; ++v)
    if (header[fixed + v] != "state_" + std::to_string(v + 1))
      throw ValidationError("'" + path + "': bad state column '" +
                            header[fixed + v] + "'");
  *d_out = d;

  std::vector<RawRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split(line, ',');
    if (f.size() != fixed + static_cast<size_t>(d))
      throw ValidationError("row " + std::to_string(line_no) + ": expected " +
                            std::to_string(fixed + d) + " fields, got " +
                            std::to_string(f.size()));
    RawRow r;
    r.line_no = line_no;
    size_t k = 0;
    r.day = parse_long(f[k++], line_no, "day");
    r.time = parse_long(f[k++], line_no, "time");
    r.region = spatial ? parse_long(f[k++], line_no, "region") : 0;
    long a = parse_long(f[k++], line_no, "action");
    if (a != 0 && a != 1)
      throw ValidationError("row " + std::to_string(line_no) +
                            ": action must be 0 or 1, got " + std::to_string(a));
    r.action = static_cast<int>(a);
    r.outcome = parse_double(f[k++], line_no, "outcome");
    r.state.resize(d);
    for (int v = 0; v < d; ++v)
      r.state[v] = parse_double(f[k + v], line_no, "state");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ValidationError("'" + path + "' has no data rows");
  return rows;
}

std::map<long, int> index_labels(const std::set<long>& labels) {
  std::map<long, int> idx;
  int k = 0;
  for (long v : labels) idx[v] = k++;
  return idx;
}

}  // namespace

Eigen::VectorXd PanelDataset::design_row(int i, int t) const {
  Eigen::VectorXd z(d + 2);
  z(0) = 1.0;
  z.segment(1, d) = states[t].row(i);
  z(d + 1) = static_cast<double>(actions(i, t));
  return z;
}

void PanelDataset::validate() const {
  if (n < 2 || m < 2 || d < 1)
    throw ValidationError("panel needs n >= 2, m >= 2, d >= 1 (got n=" +
                          std::to_string(n) + ", m=" + std::to_string(m) +
                          ", d=" + std::to_string(d) + ")");
  if (outcomes.rows() != n || outcomes.cols() != m)
    throw ValidationError("outcome array shape mismatch");
  if (actions.rows() != n || actions.cols() != m)
    throw ValidationError("action array shape mismatch");
  if (static_cast<int>(states.size()) != m)
    throw ValidationError("state array shape mismatch");
  for (const auto& st : states)
    if (st.rows() != n || st.cols() != d)
      throw ValidationError("state array shape mismatch");
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < m; ++t)
      if (actions(i, t) != 0 && actions(i, t) != 1)
        throw ValidationError("non-binary action at day " + std::to_string(i) +
                              ", time " + std::to_string(t));
  if (!outcomes.allFinite()) throw ValidationError("non-finite outcome");
  for (const auto& st : states)
    if (!st.allFinite()) throw ValidationError("non-finite state");
}

PanelDataset PanelDataset::time_window(int t_lo, int t_hi) const {
  if (t_lo < 0 || t_hi >= m || t_lo > t_hi)
    throw ValidationError("bad time window [" + std::to_string(t_lo) + ", " +
                          std::to_string(t_hi) + "] for m=" + std::to_string(m));
  PanelDataset out;
  out.n = n;
  out.m = t_hi - t_lo + 1;
  out.d = d;
  out.outcomes = outcomes.middleCols(t_lo, out.m);
  out.actions = actions.middleCols(t_lo, out.m);
  out.states.assign(states.begin() + t_lo, states.begin() + t_hi + 1);
  out.validate();
  return out;
}

double SpatioPanelDataset::neighbor_action_mean(int i, int t, int region) const {
  const auto& nb = neighbors[region];
  double s = 0.0;
  for (int k : nb) s += actions[k](i, t);
  return s / static_cast<double>(nb.size());
}

Eigen::VectorXd SpatioPanelDataset::design_row(int i, int t, int region) const {
  Eigen::VectorXd z(d + 3);
  z(0) = 1.0;
  z.segment(1, d) = states[region][t].row(i);
  z(d + 1) = static_cast<double>(actions[region](i, t));
  z(d + 2) = neighbor_action_mean(i, t, region);
  return z;
}

void SpatioPanelDataset::validate() const {
  if (r < 2) throw ValidationError("spatiotemporal panel needs r >= 2 regions");
  if (static_cast<int>(outcomes.size()) != r ||
      static_cast<int>(states.size()) != r ||
      static_cast<int>(actions.size()) != r ||
      static_cast<int>(neighbors.size()) != r || coords.rows() != r ||
      coords.cols() != 2)
    throw ValidationError("region axis shape mismatch");
  if (!coords.allFinite()) throw ValidationError("non-finite region coordinate");
  for (int k = 0; k < r; ++k) {
    if (neighbors[k].empty())
      throw ValidationError("region " + std::to_string(k) + " has no neighbors");
    for (int j : neighbors[k]) {
      if (j < 0 || j >= r)
        throw ValidationError("region " + std::to_string(k) +
                              " lists unknown neighbor " + std::to_string(j));
      if (j == k)
        throw ValidationError("region " + std::to_string(k) +
                              " lists itself as a neighbor");
      if (std::find(neighbors[j].begin(), neighbors[j].end(), k) ==
          neighbors[j].end())
        throw ValidationError("asymmetric adjacency: region " +
                              std::to_string(k) + " lists " + std::to_string(j) +
                              " but not vice versa");
    }
  }
  for (int k = 0; k < r; ++k) region_panel(k).validate();
}

PanelDataset SpatioPanelDataset::region_panel(int region) const {
  PanelDataset out;
  out.n = n;
  out.m = m;
  out.d = d;
  out.outcomes = outcomes[region];
  out.states = states[region];
  out.actions = actions[region];
  return out;
}

SpatioPanelDataset SpatioPanelDataset::time_window(int t_lo, int t_hi) const {
  SpatioPanelDataset out = *this;
  out.m = t_hi - t_lo + 1;
  for (int k = 0; k < r; ++k) {
    PanelDataset p = region_panel(k).time_window(t_lo, t_hi);
    out.outcomes[k] = p.outcomes;
    out.actions[k] = p.actions;
    out.states[k] = p.states;
  }
  out.validate();
  return out;
}

std::vector<int> alternating_design(int m, int ti, int start) {
  if (m < 1 || ti < 1) throw ValidationError("alternating design needs m >= 1, TI >= 1");
  if (start != 0 && start != 1) throw ValidationError("start must be 0 or 1");
  if (ti > m)
    throw ValidationError("TI=" + std::to_string(ti) + " > m=" +
                          std::to_string(m) + ": constant treatment within the day");
  std::vector<int> a(m);
  for (int t = 0; t < m; ++t) a[t] = ((t / ti) % 2 == 0) ? start : 1 - start;
  return a;
}

PanelDataset load_panel_csv(const std::string& path) {
  int d = 0;
  std::vector<RawRow> rows = scan_rows(path, false, &d);

  std::set<long> days, times;
  for (const auto& r : rows) {
    days.insert(r.day);
    times.insert(r.time);
  }
  auto di = index_labels(days);
  auto ti = index_labels(times);

  PanelDataset ds;
  ds.n = static_cast<int>(days.size());
  ds.m = static_cast<int>(times.size());
  ds.d = d;
  ds.outcomes.setZero(ds.n, ds.m);
  ds.actions.setZero(ds.n, ds.m);
  ds.states.assign(ds.m, Eigen::MatrixXd::Zero(ds.n, d));

  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(ds.n, ds.m);
  for (const auto& r : rows) {
    int i = di[r.day], t = ti[r.time];
    if (seen(i, t))
      throw ValidationError("row " + std::to_string(r.line_no) +
                            ": duplicate (day,time) key");
    seen(i, t) = 1;
    ds.outcomes(i, t) = r.outcome;
    ds.actions(i, t) = r.action;
    for (int v = 0; v < d; ++v) ds.states[t](i, v) = r.state[v];
  }
  for (int i = 0; i < ds.n; ++i)
    for (int t = 0; t < ds.m; ++t)
      if (!seen(i, t))
        throw ValidationError("missing cell: no row for day index " +
                              std::to_string(i) + ", time index " +
                              std::to_string(t));
  ds.validate();
  return ds;
}

SpatioPanelDataset load_spatio_panel_csv(const std::string& data_path,
                                         const std::string& regions_path) {
  // Sidecar first: region,lon,lat,neighbors
  std::ifstream rin(regions_path);
  if (!rin) throw ValidationError("cannot open '" + regions_path + "'");
  std::string line;
  if (!std::getline(rin, line) ||
      (line != "region,lon,lat,neighbors" &&
       line != "region,lon,lat,neighbors\r"))
    throw ValidationError("'" + regions_path +
                          "': expected header region,lon,lat,neighbors");
  struct RegionRow {
    double lon, lat;
    std::vector<long> nb;
  };
  std::map<long, RegionRow> regions;
  int line_no = 1;
  while (std::getline(rin, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f = split(line, ',');
    if (f.size() != 4)
      throw ValidationError("row " + std::to_string(line_no) + " of '" +
                            regions_path + "': expected 4 fields");
    long id = parse_long(f[0], line_no, "region");
    if (regions.count(id))
      throw ValidationError("row " + std::to_string(line_no) +
                            ": duplicate region " + std::to_string(id));
    RegionRow rr;
    rr.lon = parse_double(f[1], line_no, "lon");
    rr.lat = parse_double(f[2], line_no, "lat");
    for (const std::string& tok : split(f[3], ';'))
      if (!tok.empty()) rr.nb.push_back(parse_long(tok, line_no, "neighbor"));
    regions[id] = std::move(rr);
  }
  if (regions.size() < 2)
    throw ValidationError("'" + regions_path + "' defines fewer than 2 regions");

  std::map<long, int> ri;
  {
    int k = 0;
    for (const auto& [id, _] : regions) ri[id] = k++;
  }

  int d = 0;
  std::vector<RawRow> rows = scan_rows(data_path, true, &d);
  std::set<long> days, times;
  for (const auto& r : rows) {
    if (!ri.count(r.region))
      throw ValidationError("row " + std::to_string(r.line_no) +
                            ": unknown region " + std::to_string(r.region));
    days.insert(r.day);
    times.insert(r.time);
  }
  auto di = index_labels(days);
  auto ti = index_labels(times);

  SpatioPanelDataset ds;
  ds.n = static_cast<int>(days.size());
  ds.m = static_cast<int>(times.size());
  ds.d = d;
  ds.r = static_cast<int>(regions.size());
  ds.outcomes.assign(ds.r, Eigen::MatrixXd::Zero(ds.n, ds.m));
  ds.actions.assign(ds.r, Eigen::MatrixXi::Zero(ds.n, ds.m));
  ds.states.assign(ds.r, std::vector<Eigen::MatrixXd>(
                             ds.m, Eigen::MatrixXd::Zero(ds.n, d)));
  ds.neighbors.resize(ds.r);
  ds.coords.resize(ds.r, 2);
  for (const auto& [id, rr] : regions) {
    int k = ri[id];
    ds.coords(k, 0) = rr.lon;
    ds.coords(k, 1) = rr.lat;
    for (long nb : rr.nb) {
      auto it = ri.find(nb);
      if (it == ri.end())
        throw ValidationError("region " + std::to_string(id) +
                              " lists unknown neighbor " + std::to_string(nb));
      ds.neighbors[k].push_back(it->second);
    }
  }

  std::vector<Eigen::MatrixXi> seen(ds.r, Eigen::MatrixXi::Zero(ds.n, ds.m));
  for (const auto& r : rows) {
    int i = di[r.day], t = ti[r.time], k = ri[r.region];
    if (seen[k](i, t))
      throw ValidationError("row " + std::to_string(r.line_no) +
                            ": duplicate (day,time,region) key");
    seen[k](i, t) = 1;
    ds.outcomes[k](i, t) = r.outcome;
    ds.actions[k](i, t) = r.action;
    for (int v = 0; v < d; ++v) ds.states[k][t](i, v) = r.state[v];
  }
  for (int k = 0; k < ds.r; ++k)
    for (int i = 0; i < ds.n; ++i)
      for (int t = 0; t < ds.m; ++t)
        if (!seen[k](i, t))
          throw ValidationError(
              "missing cell: region index " + std::to_string(k) +
              ", day index " + std::to_string(i) + ", time index " +
              std::to_string(t));
  ds.validate();
  return ds;
}

void write_panel_csv(const PanelDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << "day,time,action,outcome";
  for (int v = 1; v <= ds.d; ++v) out << ",state_" << v;
  out << "\n";
  for (int i = 0; i < ds.n; ++i)
    for (int t = 0; t < ds.m; ++t) {
      out << (i + 1) << ',' << (t + 1) << ',' << ds.actions(i, t) << ','
          << fmt_double(ds.outcomes(i, t));
      for (int v = 0; v < ds.d; ++v) out << ',' << fmt_double(ds.states[t](i, v));
      out << "\n";
    }
}

void write_spatio_panel_csv(const SpatioPanelDataset& ds,
                            const std::string& data_path,
                            const std::string& regions_path) {
  std::ofstream out(data_path);
  if (!out) throw ValidationError("cannot write '" + data_path + "'");
  out << "day,time,region,action,outcome";
  for (int v = 1; v <= ds.d; ++v) out << ",state_" << v;
  out << "\n";
  for (int k = 0; k < ds.r; ++k)
    for (int i = 0; i < ds.n; ++i)
      for (int t = 0; t < ds.m; ++t) {
        out << (i + 1) << ',' << (t + 1) << ',' << (k + 1) << ','
            << ds.actions[k](i, t) << ',' << fmt_double(ds.outcomes[k](i, t));
        for (int v = 0; v < ds.d; ++v)
          out << ',' << fmt_double(ds.states[k][t](i, v));
        out << "\n";
      }
  std::ofstream rout(regions_path);
  if (!rout) throw ValidationError("cannot write '" + regions_path + "'");
  rout << "region,lon,lat,neighbors\n";
  for (int k = 0; k < ds.r; ++k) {
    rout << (k + 1) << ',' << fmt_double(ds.coords(k, 0)) << ','
         << fmt_double(ds.coords(k, 1)) << ',';
    for (size_t j = 0; j < ds.neighbors[k].size(); ++j) {
      if (j) rout << ';';
      rout << (ds.neighbors[k][j] + 1);
    }
    rout << "\n";
  }
}

}  // namespace cqte
