#include "modelspace/clustering.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <tuple>

#include "modelspace/error.hpp"

namespace modelspace {

std::string_view to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::Average: return "average";
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
  }
  return "unknown";
}

Linkage linkage_from_string(std::string_view name) {
  if (name == "average") return Linkage::Average;
  if (name == "single") return Linkage::Single;
  if (name == "complete") return Linkage::Complete;
  fail(ErrorKind::InvalidArgument, "unknown linkage '" + std::string(name) + "'");
}

std::string_view to_string(Dissimilarity d) {
  return d == Dissimilarity::Inverse ? "inverse" : "one-minus";
}

Dissimilarity dissimilarity_from_string(std::string_view name) {
  if (name == "inverse") return Dissimilarity::Inverse;
  if (name == "one-minus") return Dissimilarity::OneMinus;
  fail(ErrorKind::InvalidArgument, "unknown dissimilarity '" + std::string(name) + "'");
}

const std::string& Dendrogram::min_label(std::size_t node) const {
  if (is_leaf(node)) return nodes[node].label;
  const auto& l = min_label(static_cast<std::size_t>(nodes[node].left));
  const auto& r = min_label(static_cast<std::size_t>(nodes[node].right));
  return l < r ? l : r;
}

std::vector<std::string> Dendrogram::leaves(std::size_t node) const {
  if (is_leaf(node)) return {nodes[node].label};
  auto out = leaves(static_cast<std::size_t>(nodes[node].left));
  auto right = leaves(static_cast<std::size_t>(nodes[node].right));
  out.insert(out.end(), right.begin(), right.end());
  std::sort(out.begin(), out.end());
  return out;
}

Dendrogram agglomerate(const LabeledMatrix& distances, Linkage linkage) {
  distances.validate();
  const std::size_t n = distances.size();
  if (n < 2) fail(ErrorKind::TooFewModels, "clustering needs at least 2 models");

  // Work in sorted-id order so the input permutation cannot matter.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return distances.ids[a] < distances.ids[b]; });

  Dendrogram tree;
  tree.leaf_count = n;
  for (auto i : order) tree.nodes.push_back({distances.ids[i], -1, -1, 0.0});

  std::vector<double> d(n * n, 0.0);
  double max_finite = 0.0;
  bool any_finite = false;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double v = distances.at(order[a], order[b]);
      if (std::isnan(v)) fail(ErrorKind::NonFiniteValue, "NaN distance");
      d[a * n + b] = d[b * n + a] = v;
      if (std::isfinite(v)) {
        max_finite = any_finite ? std::max(max_finite, v) : v;
        any_finite = true;
      }
    }
  }
  const double cap = any_finite ? 10.0 * max_finite : 1.0;
  for (auto& v : d) {
    if (std::isinf(v)) {
      v = cap;
      tree.replaced_infinite = true;
    }
  }

  // Active clusters, indexed by slot; distances updated by Lance-Williams.
  std::vector<int> node_of(n);
  std::vector<std::size_t> size(n, 1);
  std::vector<bool> active(n, true);
  std::iota(node_of.begin(), node_of.end(), 0);

  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t best_a = n, best_b = n;
    double best = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!active[a]) continue;
      for (std::size_t b = a + 1; b < n; ++b) {
        if (!active[b]) continue;
        const double v = d[a * n + b];
        if (best_a == n || v < best) {
          best = v;
          best_a = a;
          best_b = b;
          continue;
        }
        if (v == best) {
          auto key = [&](std::size_t x, std::size_t y) {
            const auto& lx = tree.min_label(static_cast<std::size_t>(node_of[x]));
            const auto& ly = tree.min_label(static_cast<std::size_t>(node_of[y]));
            return lx < ly ? std::tie(lx, ly) : std::tie(ly, lx);
          };
          if (key(a, b) < key(best_a, best_b)) {
            best_a = a;
            best_b = b;
          }
        }
      }
    }
    const auto& la = tree.min_label(static_cast<std::size_t>(node_of[best_a]));
    const auto& lb = tree.min_label(static_cast<std::size_t>(node_of[best_b]));
    const bool a_first = la < lb;
    Dendrogram::Node merged;
    merged.left = a_first ? node_of[best_a] : node_of[best_b];
    merged.right = a_first ? node_of[best_b] : node_of[best_a];
    merged.height = best;
    tree.nodes.push_back(merged);

    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == best_a || k == best_b) continue;
      const double da = d[k * n + best_a], db = d[k * n + best_b];
      double v = 0.0;
      switch (linkage) {
        case Linkage::Average:
          v = (static_cast<double>(size[best_a]) * da + static_cast<double>(size[best_b]) * db) /
              static_cast<double>(size[best_a] + size[best_b]);
          break;
        case Linkage::Single: v = std::min(da, db); break;
        case Linkage::Complete: v = std::max(da, db); break;
      }
      d[k * n + best_a] = d[best_a * n + k] = v;
    }
    size[best_a] += size[best_b];
    active[best_b] = false;
    node_of[best_a] = static_cast<int>(tree.nodes.size() - 1);
  }
  return tree;
}

LabeledMatrix dissimilarity_matrix(const AffinityMatrix& affinity, Dissimilarity kind) {
  if (kind == Dissimilarity::Inverse) return affinity.distance_matrix();
  LabeledMatrix m = affinity.similarity;
  m.kind = MatrixKind::Distance;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) m.at(i, j) = i == j ? 0.0 : 1.0 - m.at(i, j);
  }
  return m;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool needs_quotes(const std::string& label) {
  return label.empty() || label.find_first_of(" ()[]':;,\t\n") != std::string::npos;
}

std::string quote(const std::string& label) {
  if (!needs_quotes(label)) return label;
  std::string out = "'";
  for (char c : label) {
    if (c == '\'') out += '\'';
    out += c;
  }
  return out + "'";
}

void emit(const Dendrogram& t, std::size_t node, double parent_height, bool is_root,
          std::string& out) {
  const auto& n = t.nodes[node];
  if (t.is_leaf(node)) {
    out += quote(n.label);
  } else {
    auto a = static_cast<std::size_t>(n.left), b = static_cast<std::size_t>(n.right);
    if (t.min_label(b) < t.min_label(a)) std::swap(a, b);
    out += '(';
    emit(t, a, n.height, false, out);
    out += ',';
    emit(t, b, n.height, false, out);
    out += ')';
  }
  if (!is_root) out += ':' + shortest(parent_height - n.height);
}

struct ParsedNode {
  std::string label;
  double length = 0.0;
  std::vector<ParsedNode> children;
};

class NewickParser {
 public:
  explicit NewickParser(std::string_view text) : s_(text) {}

  ParsedNode parse() {
    ParsedNode root = node();
    skip_ws();
    if (!eat(';')) error("expected ';'");
    skip_ws();
    if (pos_ != s_.size()) error("trailing characters");
    return root;
  }

 private:
  [[noreturn]] void error(const std::string& what) {
    fail(ErrorKind::ParseError, "newick at offset " + std::to_string(pos_) + ": " + what);
  }
  // Whitespace and [bracketed comments].
  void skip_ws() {
    while (pos_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[pos_]))) {
        ++pos_;
      } else if (s_[pos_] == '[') {
        const auto end = s_.find(']', pos_);
        if (end == std::string_view::npos) error("unterminated comment");
        pos_ = end + 1;
      } else {
        break;
      }
    }
  }
  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  std::string label() {
    skip_ws();
    std::string out;
    if (pos_ < s_.size() && s_[pos_] == '\'') {
      ++pos_;
      while (true) {
        if (pos_ >= s_.size()) error("unterminated quoted label");
        if (s_[pos_] == '\'') {
          if (pos_ + 1 < s_.size() && s_[pos_ + 1] == '\'') {
            out += '\'';
            pos_ += 2;
            continue;
          }
          ++pos_;
          return out;
        }
        out += s_[pos_++];
      }
    }
    while (pos_ < s_.size() && std::string_view("():;,[").find(s_[pos_]) == std::string_view::npos &&
           !std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      out += s_[pos_++];
    }
    return out;
  }
  ParsedNode node() {
    ParsedNode n;
    if (eat('(')) {
      do {
        n.children.push_back(node());
      } while (eat(','));
      if (!eat(')')) error("expected ')'");
    }
    n.label = label();
    if (eat(':')) {
      skip_ws();
      double v = 0.0;
      const auto res = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
      if (res.ec != std::errc()) error("bad branch length");
      pos_ = static_cast<std::size_t>(res.ptr - s_.data());
      n.length = v;
    }
    return n;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string to_newick(const Dendrogram& tree) {
  std::string out;
  emit(tree, tree.root(), tree.nodes[tree.root()].height, true, out);
  return out + ";";
}

Dendrogram parse_newick(std::string_view text) {
  const ParsedNode root = NewickParser(text).parse();

  struct Flat {
    const ParsedNode* node;
    double height;
  };
  // Heights follow from branch lengths: a node sits at its child's height
  // plus that child's branch length (leaves at 0).
  std::function<double(const ParsedNode&)> height_of = [&](const ParsedNode& n) -> double {
    if (n.children.empty()) return 0.0;
    if (n.children.size() != 2) fail(ErrorKind::ParseError, "newick tree is not binary");
    return height_of(n.children[0]) + n.children[0].length;
  };
  std::vector<const ParsedNode*> leaves;
  std::vector<Flat> internals;
  std::function<void(const ParsedNode&)> collect = [&](const ParsedNode& n) {
    if (n.children.empty()) {
      leaves.push_back(&n);
      return;
    }
    internals.push_back({&n, height_of(n)});
    for (const auto& c : n.children) collect(c);
  };
  collect(root);
  if (leaves.size() < 2) fail(ErrorKind::ParseError, "newick tree has fewer than 2 leaves");

  std::sort(leaves.begin(), leaves.end(),
            [](const ParsedNode* a, const ParsedNode* b) { return a->label < b->label; });
  Dendrogram tree;
  tree.leaf_count = leaves.size();
  std::vector<std::pair<const ParsedNode*, int>> index;
  for (const auto* l : leaves) {
    index.emplace_back(l, static_cast<int>(tree.nodes.size()));
    tree.nodes.push_back({l->label, -1, -1, 0.0});
  }
  auto lookup = [&](const ParsedNode* p) {
    for (const auto& [node, id] : index) {
      if (node == p) return id;
    }
    return -1;
  };
  // Children must be placed before parents: order merges by height, then
  // by depth (a parent never sits below its child).
  std::stable_sort(internals.begin(), internals.end(),
                   [](const Flat& a, const Flat& b) { return a.height < b.height; });
  std::vector<bool> placed(internals.size(), false);
  for (std::size_t done = 0; done < internals.size();) {
    bool progress = false;
    for (std::size_t k = 0; k < internals.size(); ++k) {
      if (placed[k]) continue;
      const auto& n = *internals[k].node;
      const int l = lookup(&n.children[0]), r = lookup(&n.children[1]);
      if (l < 0 || r < 0) continue;
      index.emplace_back(&n, static_cast<int>(tree.nodes.size()));
      tree.nodes.push_back({"", l, r, internals[k].height});
      placed[k] = true;
      ++done;
      progress = true;
      break;
    }
    if (!progress) fail(ErrorKind::ParseError, "newick tree is malformed");
  }
  return tree;
}

std::vector<std::vector<std::string>> cut_tree(const Dendrogram& tree, std::size_t clusters) {
  if (clusters < 1 || clusters > tree.leaf_count) {
    fail(ErrorKind::InvalidArgument, "cannot cut " + std::to_string(tree.leaf_count) +
                                         " leaves into " + std::to_string(clusters) + " clusters");
  }
  std::vector<std::size_t> roots = {tree.root()};
  while (roots.size() < clusters) {
    const auto it = std::max_element(roots.begin(), roots.end());
    const auto node = *it;
    roots.erase(it);
    roots.push_back(static_cast<std::size_t>(tree.nodes[node].left));
    roots.push_back(static_cast<std::size_t>(tree.nodes[node].right));
  }
  std::vector<std::vector<std::string>> groups;
  for (auto r : roots) groups.push_back(tree.leaves(r));
  std::sort(groups.begin(), groups.end());
  return groups;
}

std::string render_text(const Dendrogram& tree) {
  std::ostringstream os;
  std::function<void(std::size_t, std::size_t)> walk = [&](std::size_t node, std::size_t depth) {
    os << std::string(2 * depth, ' ');
    if (tree.is_leaf(node)) {
      os << tree.nodes[node].label << '\n';
      return;
    }
    os << "+ " << shortest(tree.nodes[node].height) << '\n';
    auto a = static_cast<std::size_t>(tree.nodes[node].left);
    auto b = static_cast<std::size_t>(tree.nodes[node].right);
    if (tree.min_label(b) < tree.min_label(a)) std::swap(a, b);
    walk(a, depth + 1);
    walk(b, depth + 1);
  };
  walk(tree.root(), 0);
  return os.str();
}

}  // namespace modelspace
