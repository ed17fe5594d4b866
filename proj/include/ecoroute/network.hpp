#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ecoroute/csv.hpp"
#include "ecoroute/errors.hpp"

namespace ecoroute {

using LinkIndex = std::uint32_t;
inline constexpr LinkIndex kInvalidLink = static_cast<LinkIndex>(-1);

/// One directed road link. Geometry is reduced to length, average grade and
/// the posted speed limit; optional planar midpoint coordinates support
/// demand clustering.
struct Link {
  std::string id;
  double length_m = 0.0;
  double grade_rad = 0.0;
  double speed_limit_mps = 0.0;
  std::optional<std::string> reverse_of;
  std::optional<double> x_m;
  std::optional<double> y_m;
};

/// Permitted transition between two adjacent directed links.
struct Movement {
  std::string from_link;
  std::string to_link;
};

struct NetworkBuildReport {
  std::size_t uturns_dropped = 0;
  std::size_t duplicates_dropped = 0;
};

/// Immutable road network over directed links. Nodes of the routing graph are
/// links; edges are permitted movements. Links are stored sorted by id, so
/// internal indices order the same way as ids and adjacency lists sorted by
/// index are sorted by id as well.
class RoadNetwork {
 public:
  static RoadNetwork build(std::vector<Link> links, const std::vector<Movement>& movements,
                           NetworkBuildReport* report = nullptr) {
    RoadNetwork net;
    std::sort(links.begin(), links.end(),
              [](const Link& a, const Link& b) { return a.id < b.id; });
    net.links_ = std::move(links);
    for (LinkIndex i = 0; i < net.links_.size(); ++i) {
      const Link& l = net.links_[i];
      if (l.id.empty()) throw ValidationError("empty link id");
      if (!(l.length_m > 0.0)) throw ValidationError("link " + l.id + ": length must be > 0");
      if (!(std::abs(l.grade_rad) < 0.3))
        throw ValidationError("link " + l.id + ": |grade| must be < 0.3 rad");
      if (!(l.speed_limit_mps > 0.0))
        throw ValidationError("link " + l.id + ": speed limit must be > 0");
      if (!net.index_.emplace(l.id, i).second)
        throw ValidationError("duplicate link id: " + l.id);
    }

    net.reverse_idx_.assign(net.links_.size(), kInvalidLink);
    for (LinkIndex i = 0; i < net.links_.size(); ++i) {
      const Link& l = net.links_[i];
      if (!l.reverse_of) continue;
      auto it = net.index_.find(*l.reverse_of);
      if (it == net.index_.end())
        throw ValidationError("link " + l.id + ": reverse_of references unknown link '" +
                              *l.reverse_of + "'");
      net.reverse_idx_[i] = it->second;
    }
    for (LinkIndex i = 0; i < net.links_.size(); ++i) {
      const LinkIndex r = net.reverse_idx_[i];
      if (r == kInvalidLink) continue;
      if (r == i || net.reverse_idx_[r] != i)
        throw ValidationError("link " + net.links_[i].id + ": reverse_of is not symmetric");
    }

    NetworkBuildReport rep;
    std::vector<std::pair<LinkIndex, LinkIndex>> edges;
    edges.reserve(movements.size());
    for (const Movement& m : movements) {
      const auto from_it = net.find_index(m.from_link);
      const auto to_it = net.find_index(m.to_link);
      if (!from_it || !to_it)
        throw ValidationError("movement " + m.from_link + " -> " + m.to_link +
                              ": references unknown link");
      const LinkIndex from = *from_it;
      const LinkIndex to = *to_it;
      if (from == to)
        throw ValidationError("movement " + m.from_link + " -> " + m.to_link +
                              ": self transition");
      if (net.reverse_idx_[from] == to) {
        ++rep.uturns_dropped;  // §-style U-turn prohibition
        continue;
      }
      edges.emplace_back(from, to);
    }
    std::sort(edges.begin(), edges.end());
    const auto last = std::unique(edges.begin(), edges.end());
    rep.duplicates_dropped = static_cast<std::size_t>(edges.end() - last);
    edges.erase(last, edges.end());

    // CSR forward adjacency (already sorted by from, then to).
    net.fwd_offsets_.assign(net.links_.size() + 1, 0);
    for (const auto& [from, to] : edges) ++net.fwd_offsets_[from + 1];
    for (std::size_t i = 1; i < net.fwd_offsets_.size(); ++i)
      net.fwd_offsets_[i] += net.fwd_offsets_[i - 1];
    net.fwd_targets_.resize(edges.size());
    {
      std::vector<std::uint32_t> cursor(net.fwd_offsets_.begin(), net.fwd_offsets_.end() - 1);
      for (const auto& [from, to] : edges) net.fwd_targets_[cursor[from]++] = to;
    }

    // CSR reverse adjacency with back-pointers into the forward movement array.
    net.rev_offsets_.assign(net.links_.size() + 1, 0);
    for (const auto& [from, to] : edges) ++net.rev_offsets_[to + 1];
    for (std::size_t i = 1; i < net.rev_offsets_.size(); ++i)
      net.rev_offsets_[i] += net.rev_offsets_[i - 1];
    net.rev_sources_.resize(edges.size());
    net.rev_movement_.resize(edges.size());
    {
      std::vector<std::uint32_t> cursor(net.rev_offsets_.begin(), net.rev_offsets_.end() - 1);
      for (std::uint32_t e = 0; e < edges.size(); ++e) {
        const auto [from, to] = edges[e];
        net.rev_sources_[cursor[to]] = from;
        net.rev_movement_[cursor[to]] = e;
        ++cursor[to];
      }
    }

    if (report) *report = rep;
    return net;
  }

  std::size_t size() const { return links_.size(); }
  std::size_t movement_count() const { return fwd_targets_.size(); }

  const Link& link(LinkIndex i) const { return links_[i]; }
  const std::vector<Link>& links() const { return links_; }

  LinkIndex require_index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw NotFoundError("unknown link: " + id);
    return it->second;
  }

  std::optional<LinkIndex> find_index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  LinkIndex reverse_of(LinkIndex i) const { return reverse_idx_[i]; }

  /// Permitted next links, sorted by link id.
  std::span<const LinkIndex> successors(LinkIndex i) const {
    return {fwd_targets_.data() + fwd_offsets_[i], fwd_offsets_[i + 1] - fwd_offsets_[i]};
  }

  std::span<const LinkIndex> predecessors(LinkIndex i) const {
    return {rev_sources_.data() + rev_offsets_[i], rev_offsets_[i + 1] - rev_offsets_[i]};
  }

  /// Movement indices (into the forward CSR order) of the edges ending at i,
  /// aligned with predecessors(i).
  std::span<const std::uint32_t> predecessor_movements(LinkIndex i) const {
    return {rev_movement_.data() + rev_offsets_[i], rev_offsets_[i + 1] - rev_offsets_[i]};
  }

  /// Movement index of edge from->to in forward CSR order.
  std::optional<std::uint32_t> movement_index(LinkIndex from, LinkIndex to) const {
    const auto begin = fwd_targets_.begin() + fwd_offsets_[from];
    const auto end = fwd_targets_.begin() + fwd_offsets_[from + 1];
    const auto it = std::lower_bound(begin, end, to);
    if (it == end || *it != to) return std::nullopt;
    return static_cast<std::uint32_t>(it - fwd_targets_.begin());
  }

  bool has_movement(LinkIndex from, LinkIndex to) const {
    return movement_index(from, to).has_value();
  }

  /// Distinct speed-limit values present, sorted ascending.
  std::vector<double> speed_limit_categories() const {
    std::vector<double> cats;
    for (const Link& l : links_) cats.push_back(l.speed_limit_mps);
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    return cats;
  }

 private:
  std::vector<Link> links_;
  std::unordered_map<std::string, LinkIndex> index_;
  std::vector<LinkIndex> reverse_idx_;
  std::vector<std::uint32_t> fwd_offsets_, fwd_targets_;
  std::vector<std::uint32_t> rev_offsets_, rev_sources_, rev_movement_;
};

/// Spec'd successor lookup by id: exactly the permitted next links, sorted.
inline std::vector<std::string> successors(const RoadNetwork& net, const std::string& link_id) {
  const LinkIndex i = net.require_index(link_id);
  std::vector<std::string> out;
  for (LinkIndex s : net.successors(i)) out.push_back(net.link(s).id);
  return out;
}

// ---------------------------------------------------------------------------
// CSV loading.
//   links.csv:     link_id,length_m,grade_rad,speed_limit_mps,reverse_of[,x_m,y_m]
//   movements.csv: from_link,to_link
// ---------------------------------------------------------------------------

inline std::vector<Link> load_links_csv(const std::string& path) {
  CsvReader reader(path,
                   {"link_id", "length_m", "grade_rad", "speed_limit_mps", "reverse_of", "x_m", "y_m"},
                   /*min_required=*/5);
  const bool has_xy = reader.columns().size() >= 7;
  std::vector<Link> links;
  std::vector<std::string> f;
  while (reader.next(f)) {
    Link l;
    l.id = f[0];
    l.length_m = reader.field_double(f, 1);
    l.grade_rad = reader.field_double(f, 2);
    l.speed_limit_mps = reader.field_double(f, 3);
    if (!f[4].empty()) l.reverse_of = f[4];
    if (has_xy) {
      if (!f[5].empty()) l.x_m = reader.field_double(f, 5);
      if (!f[6].empty()) l.y_m = reader.field_double(f, 6);
    }
    links.push_back(std::move(l));
  }
  return links;
}

inline std::vector<Movement> load_movements_csv(const std::string& path) {
  CsvReader reader(path, {"from_link", "to_link"});
  std::vector<Movement> movements;
  std::vector<std::string> f;
  while (reader.next(f)) {
    if (f[0].empty() || f[1].empty()) throw ParseError(path, reader.line(), "empty link id");
    movements.push_back({f[0], f[1]});
  }
  return movements;
}

inline RoadNetwork load_network(const std::string& links_path, const std::string& movements_path,
                                NetworkBuildReport* report = nullptr) {
  auto net = RoadNetwork::build(load_links_csv(links_path), load_movements_csv(movements_path),
                                report);
  if (report && report->uturns_dropped > 0)
    log_warn(std::to_string(report->uturns_dropped) + " U-turn movements dropped");
  return net;
}

inline void write_links_csv(const std::string& path, const RoadNetwork& net) {
  CsvWriter w(path, {"link_id", "length_m", "grade_rad", "speed_limit_mps", "reverse_of", "x_m", "y_m"});
  for (const Link& l : net.links()) {
    w.row({l.id, format_double(l.length_m), format_double(l.grade_rad),
           format_double(l.speed_limit_mps), l.reverse_of.value_or(""),
           l.x_m ? format_double(*l.x_m) : "", l.y_m ? format_double(*l.y_m) : ""});
  }
}

inline void write_movements_csv(const std::string& path, const RoadNetwork& net) {
  CsvWriter w(path, {"from_link", "to_link"});
  for (LinkIndex i = 0; i < net.size(); ++i)
    for (LinkIndex s : net.successors(i)) w.row({net.link(i).id, net.link(s).id});
}

}  // namespace ecoroute
