#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "weicom/embedding_store.hpp"
#include "weicom/error.hpp"
#include "weicom/fusion.hpp"
#include "weicom/parallel.hpp"
#include "weicom/similarity.hpp"

namespace weicom {

struct ClassValues {
  std::string class_name;
  std::vector<std::string> values;
};

/// One attribute and, per class, the values a query may switch between.
struct AttributeSpec {
  std::string attribute;
  std::vector<ClassValues> entries;
};

inline std::vector<AttributeSpec> parse_benchmark_spec(const json& doc) {
  auto fail = [](const std::string& what) { return Error(ErrorCode::FormatError, "benchmark spec: " + what); };
  if (!doc.is_object() || !doc.contains("attributes") || !doc["attributes"].is_array())
    throw fail("expected {\"attributes\": [...]}");

  std::vector<AttributeSpec> specs;
  std::set<std::string> seen_attributes;
  for (const auto& a : doc["attributes"]) {
    if (!a.is_object() || !a.contains("attribute") || !a["attribute"].is_string() || !a.contains("classes") ||
        !a["classes"].is_array())
      throw fail("each attribute needs \"attribute\" and \"classes\"");
    AttributeSpec spec{to_lower(a["attribute"].get<std::string>()), {}};
    if (!seen_attributes.insert(spec.attribute).second) throw fail("attribute '" + spec.attribute + "' listed twice");
    for (const auto& c : a["classes"]) {
      if (!c.is_object() || !c.contains("class") || !c["class"].is_string() || !c.contains("values") ||
          !c["values"].is_array())
        throw fail("each class entry needs \"class\" and \"values\"");
      ClassValues entry{to_lower(c["class"].get<std::string>()), {}};
      for (const auto& v : c["values"]) {
        if (!v.is_string()) throw fail("values must be strings");
        std::string value = to_lower(v.get<std::string>());
        if (std::find(entry.values.begin(), entry.values.end(), value) != entry.values.end())
          throw fail("value '" + value + "' repeated for class '" + entry.class_name + "'");
        entry.values.push_back(std::move(value));
      }
      spec.entries.push_back(std::move(entry));
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

inline std::vector<AttributeSpec> read_benchmark_spec(const fs::path& path) {
  try {
    return parse_benchmark_spec(json::parse(detail::read_file(path)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
}

inline json to_json(const std::vector<AttributeSpec>& specs) {
  json attributes = json::array();
  for (const auto& s : specs) {
    json classes = json::array();
    for (const auto& e : s.entries) classes.push_back({{"class", e.class_name}, {"values", e.values}});
    attributes.push_back({{"attribute", s.attribute}, {"classes", classes}});
  }
  return json{{"attributes", attributes}};
}

/// Attribute name -> distinct values in first-seen order.
inline std::vector<std::pair<std::string, std::vector<std::string>>> vocabulary_groups(
    const std::vector<AttributeSpec>& specs) {
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  for (const auto& s : specs) {
    std::vector<std::string> values;
    for (const auto& e : s.entries)
      for (const auto& v : e.values)
        if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
    groups.emplace_back(s.attribute, std::move(values));
  }
  return groups;
}

struct BenchmarkQuery {
  std::string query_image_id;
  std::string query_text;
  std::string attribute;
  std::string class_name;
  std::string source_value;
  std::vector<std::string> positives;  // corpus order

  friend bool operator==(const BenchmarkQuery&, const BenchmarkQuery&) = default;
};

using BenchmarkSuite = std::vector<BenchmarkQuery>;

/// Every image of class c holding value v_src becomes a query for each other
/// value v_tgt of the same (attribute, class); its positives are the images of
/// class c holding v_tgt. Images of the class that lack the attribute, or hold
/// a value outside the spec, only act as distractors.
inline BenchmarkSuite build_queries(const Corpus& corpus, const std::vector<AttributeSpec>& specs) {
  BenchmarkSuite suite;
  for (const auto& spec : specs) {
    for (const auto& entry : spec.entries) {
      if (entry.values.size() < 2)
        throw Error(ErrorCode::SingleValueAttribute, "attribute '" + spec.attribute + "' of class '" + entry.class_name +
                                                         "' needs at least two values");
      std::map<std::string, std::vector<std::string>> by_value;
      for (const auto& r : corpus.records()) {
        if (r.class_name != entry.class_name) continue;
        auto it = r.attributes.find(spec.attribute);
        if (it != r.attributes.end()) by_value[it->second].push_back(r.id);
      }
      for (const auto& v : entry.values)
        if (by_value[v].empty())
          throw Error(ErrorCode::EmptyValueGroup, "no image of class '" + entry.class_name + "' has " + spec.attribute +
                                                      "='" + v + "'");

      for (const auto& target : entry.values) {
        const auto& positives = by_value[target];
        for (const auto& source : entry.values) {
          if (source == target) continue;
          for (const auto& id : by_value[source])
            suite.push_back({id, target, spec.attribute, entry.class_name, source, positives});
        }
      }
    }
  }
  return suite;
}

inline json to_json(const BenchmarkQuery& q) {
  return json{{"query_image_id", q.query_image_id}, {"query_text", q.query_text}, {"attribute", q.attribute},
              {"class", q.class_name},           {"source_value", q.source_value}, {"positives", q.positives}};
}

inline void write_suite_jsonl(const fs::path& path, const BenchmarkSuite& suite) {
  std::vector<json> rows;
  rows.reserve(suite.size());
  for (const auto& q : suite) rows.push_back(to_json(q));
  write_jsonl(path, rows);
}

inline BenchmarkSuite read_suite_jsonl(const fs::path& path) {
  BenchmarkSuite suite;
  detail::for_each_jsonl(path, [&](const json& obj, std::size_t row) {
    BenchmarkQuery q;
    q.query_image_id = detail::require_string(obj, "query_image_id", row);
    q.query_text = to_lower(detail::require_string(obj, "query_text", row));
    q.attribute = to_lower(detail::require_string(obj, "attribute", row));
    q.class_name = to_lower(detail::require_string(obj, "class", row));
    if (obj.contains("source_value") && obj["source_value"].is_string()) q.source_value = obj["source_value"];
    if (!obj.contains("positives") || !obj["positives"].is_array())
      throw Error(ErrorCode::FormatError, "row " + std::to_string(row) + ": positives must be an array", row);
    for (const auto& p : obj["positives"]) {
      if (!p.is_string()) throw Error(ErrorCode::FormatError, "row " + std::to_string(row) + ": positive ids are strings", row);
      q.positives.push_back(p.get<std::string>());
    }
    suite.push_back(std::move(q));
  });
  return suite;
}

namespace detail {

template <typename IsPositive>
double average_precision_impl(std::size_t ranked_count, std::size_t positive_count, IsPositive&& is_positive) {
  if (positive_count == 0) throw Error(ErrorCode::NoPositives, "average precision needs at least one positive");
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < ranked_count && hits < positive_count; ++r) {
    if (!is_positive(r)) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }
  return sum / static_cast<double>(positive_count);
}

}  // namespace detail

/// Mean over the positives of precision at each positive's rank; positives
/// missing from the ranking contribute zero.
inline double average_precision(std::span<const std::string> ranked_ids, const std::unordered_set<std::string>& positives) {
  return detail::average_precision_impl(ranked_ids.size(), positives.size(),
                                        [&](std::size_t r) { return positives.count(ranked_ids[r]) > 0; });
}

struct AttributeResult {
  std::string attribute;
  double map = 0.0;
  std::size_t query_count = 0;
};

struct EvalReport {
  Method method;
  std::vector<AttributeResult> per_attribute;  // suite order
  double average_map = 0.0;
  std::size_t query_count = 0;
  std::size_t dropped_queries = 0;             // empty positive sets
  bool exclude_query_image = true;

  std::optional<double> map_for(std::string_view attribute) const {
    for (const auto& a : per_attribute)
      if (a.attribute == attribute) return a.map;
    return std::nullopt;
  }
};

namespace detail {

struct PreparedQuery {
  std::size_t suite_index;
  std::size_t attribute_slot;
  ComposedQuery query;
  std::vector<std::uint8_t> positive_mask;
  std::size_t positive_count;
};

struct PreparedSuite {
  std::vector<std::string> attributes;  // first-seen order
  std::vector<PreparedQuery> queries;
  std::size_t dropped = 0;
};

inline PreparedSuite prepare_suite(const Corpus& corpus, const BenchmarkSuite& suite) {
  std::vector<std::string> unknown;
  for (std::size_t i = 0; i < suite.size(); ++i)
    if (!corpus.texts().find(suite[i].query_text)) {
      unknown.push_back("#" + std::to_string(i) + " (" + suite[i].query_image_id + ", '" + suite[i].query_text + "')");
    }
  if (!unknown.empty()) {
    std::string msg = std::to_string(unknown.size()) + " queries use texts missing from the text table:";
    for (std::size_t i = 0; i < std::min<std::size_t>(unknown.size(), 20); ++i) msg += " " + unknown[i];
    if (unknown.size() > 20) msg += " ...";
    throw Error(ErrorCode::UnknownText, msg);
  }

  PreparedSuite out;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto& q = suite[i];
    if (q.positives.empty()) {
      ++out.dropped;
      continue;
    }
    auto slot_it = std::find(out.attributes.begin(), out.attributes.end(), q.attribute);
    const std::size_t slot = static_cast<std::size_t>(slot_it - out.attributes.begin());
    if (slot_it == out.attributes.end()) out.attributes.push_back(q.attribute);

    PreparedQuery pq{i, slot, make_query(corpus, q.query_image_id, q.query_text), std::vector<std::uint8_t>(corpus.count(), 0), 0};
    for (const auto& id : q.positives) {
      auto& flag = pq.positive_mask[corpus.row_of(id)];
      if (!flag) ++pq.positive_count;
      flag = 1;
    }
    out.queries.push_back(std::move(pq));
  }
  return out;
}

inline double ranking_ap(const ScoreVector& scores, const Corpus& corpus, const PreparedQuery& pq) {
  const auto rows = ranked_rows(scores, corpus.count(), corpus);
  return average_precision_impl(rows.size(), pq.positive_count, [&](std::size_t r) { return pq.positive_mask[rows[r]] != 0; });
}

/// Per-attribute mean of per-query APs, accumulated in suite order.
inline std::pair<std::vector<AttributeResult>, double> aggregate(const PreparedSuite& prepared, const std::vector<double>& aps) {
  std::vector<AttributeResult> results(prepared.attributes.size());
  std::vector<double> sums(prepared.attributes.size(), 0.0);
  for (std::size_t a = 0; a < results.size(); ++a) results[a].attribute = prepared.attributes[a];
  for (std::size_t i = 0; i < prepared.queries.size(); ++i) {
    const auto slot = prepared.queries[i].attribute_slot;
    sums[slot] += aps[i];
    ++results[slot].query_count;
  }
  double total = 0.0;
  for (std::size_t a = 0; a < results.size(); ++a) {
    results[a].map = sums[a] / static_cast<double>(results[a].query_count);
    total += results[a].map;
  }
  const double average = results.empty() ? 0.0 : total / static_cast<double>(results.size());
  return {std::move(results), average};
}

}  // namespace detail

/// Ranks the whole corpus for every query with the query image excluded and
/// averages AP per attribute. The report's average is the unweighted mean of
/// the per-attribute values.
inline EvalReport evaluate(const Corpus& corpus, const BenchmarkSuite& suite, const Method& method,
                           std::size_t threads = default_thread_count()) {
  if (method.kind == MethodKind::WeiCom) check_lambda(method.lambda);
  const auto prepared = detail::prepare_suite(corpus, suite);

  std::vector<double> aps(prepared.queries.size(), 0.0);
  parallel_for(prepared.queries.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& pq = prepared.queries[i];
      aps[i] = detail::ranking_ap(fused_scores(pq.query, corpus, method, true, 1), corpus, pq);
    }
  });

  EvalReport report;
  report.method = method;
  std::tie(report.per_attribute, report.average_map) = detail::aggregate(prepared, aps);
  report.query_count = prepared.queries.size();
  report.dropped_queries = prepared.dropped;
  return report;
}

struct SweepReport {
  std::vector<double> lambda_grid;
  std::vector<std::string> attributes;
  std::vector<std::vector<double>> rows;  // rows[a][g]
  std::vector<double> average;            // per grid point
  std::size_t best_index = 0;             // argmax of average, first on ties
  std::size_t query_count = 0;
  std::size_t dropped_queries = 0;
  bool exclude_query_image = true;

  double best_lambda() const { return lambda_grid.at(best_index); }
};

inline void check_lambda_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "lambda grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    check_lambda(grid[i]);
    if (i > 0 && !(grid[i] > grid[i - 1])) throw Error(ErrorCode::InvalidArgument, "lambda grid must be strictly increasing");
  }
}

/// WeiCom evaluated at every grid point. Normalized scores are computed once
/// per query and reused across the grid; each column equals
/// evaluate(corpus, suite, Method::weicom(grid[g])).
inline SweepReport lambda_sweep(const Corpus& corpus, const BenchmarkSuite& suite, const std::vector<double>& grid,
                                std::size_t threads = default_thread_count()) {
  check_lambda_grid(grid);
  const auto prepared = detail::prepare_suite(corpus, suite);
  const std::size_t nq = prepared.queries.size();

  std::vector<std::vector<double>> aps(grid.size(), std::vector<double>(nq, 0.0));
  parallel_for(nq, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& pq = prepared.queries[i];
      auto [sf, sg] = similarities_pair(pq.query.image_embedding, pq.query.text_embedding, corpus, 1);
      const auto row = corpus.row_of(*pq.query.query_image_id);
      sf.exclude(row);
      sg.exclude(row);
      const auto sf_norm = normalize_scores(sf);
      const auto sg_norm = normalize_scores(sg);
      for (std::size_t g = 0; g < grid.size(); ++g) aps[g][i] = detail::ranking_ap(weicom_fuse(sg_norm, sf_norm, grid[g]), corpus, pq);
    }
  });

  SweepReport report;
  report.lambda_grid = grid;
  report.attributes = prepared.attributes;
  report.rows.assign(prepared.attributes.size(), std::vector<double>(grid.size(), 0.0));
  report.average.assign(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    auto [per_attribute, avg] = detail::aggregate(prepared, aps[g]);
    for (std::size_t a = 0; a < per_attribute.size(); ++a) report.rows[a][g] = per_attribute[a].map;
    report.average[g] = avg;
    if (avg > report.average[report.best_index]) report.best_index = g;
  }
  report.query_count = nq;
  report.dropped_queries = prepared.dropped;
  return report;
}

/// Parses "A:B:S" (inclusive of B when S divides B-A within 1e-9), a comma
/// list, or a single value.
inline std::vector<double> parse_lambda_grid(std::string_view text) {
  auto number = [&](std::string_view s) {
    std::string str(s);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(str, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != str.size()) throw Error(ErrorCode::InvalidArgument, "bad number '" + str + "' in lambda grid");
    return v;
  };

  std::vector<double> grid;
  if (std::count(text.begin(), text.end(), ':') == 2) {
    const auto p1 = text.find(':');
    const auto p2 = text.find(':', p1 + 1);
    const double start = number(text.substr(0, p1));
    const double stop = number(text.substr(p1 + 1, p2 - p1 - 1));
    const double step = number(text.substr(p2 + 1));
    if (!(step > 0.0) || stop < start) throw Error(ErrorCode::InvalidArgument, "lambda grid needs step > 0 and stop >= start");
    const double steps = (stop - start) / step;
    const double nearest = std::round(steps);
    const bool divides = std::abs(steps - nearest) <= 1e-9;
    const auto n = static_cast<std::size_t>(divides ? nearest : std::floor(steps));
    for (std::size_t i = 0; i <= n; ++i) {
      double v = start + static_cast<double>(i) * step;
      v = std::round(v * 1e12) / 1e12;
      grid.push_back(v);
    }
    if (divides) grid.back() = stop;
  } else {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto comma = text.find(',', pos);
      if (comma == std::string_view::npos) comma = text.size();
      grid.push_back(number(text.substr(pos, comma - pos)));
      pos = comma + 1;
    }
  }
  check_lambda_grid(grid);
  return grid;
}

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

inline json to_json(const EvalReport& r) {
  json per_attribute = json::array();
  for (const auto& a : r.per_attribute)
    per_attribute.push_back(
        {{"attribute", a.attribute}, {"map", a.map}, {"map_percent", format_percent(a.map)}, {"queries", a.query_count}});
  json out{{"method", method_name(r.method.kind)},
           {"label", method_label(r.method)},
           {"per_attribute", per_attribute},
           {"average_map", r.average_map},
           {"average_map_percent", format_percent(r.average_map)},
           {"query_count", r.query_count},
           {"dropped_queries", r.dropped_queries},
           {"exclude_query_image", r.exclude_query_image}};
  if (r.method.kind == MethodKind::WeiCom) out["lambda"] = r.method.lambda;
  return out;
}

inline json to_json(const SweepReport& s) {
  json rows = json::array();
  for (std::size_t a = 0; a < s.attributes.size(); ++a) {
    json pct = json::array();
    for (double v : s.rows[a]) pct.push_back(format_percent(v));
    rows.push_back({{"attribute", s.attributes[a]}, {"map", s.rows[a]}, {"map_percent", pct}});
  }
  json avg_pct = json::array();
  for (double v : s.average) avg_pct.push_back(format_percent(v));
  return json{{"method", "weicom"},
              {"lambda_grid", s.lambda_grid},
              {"rows", rows},
              {"average", {{"map", s.average}, {"map_percent", avg_pct}}},
              {"best_lambda", s.best_lambda()},
              {"best_average_map", s.average.at(s.best_index)},
              {"query_count", s.query_count},
              {"dropped_queries", s.dropped_queries},
              {"exclude_query_image", s.exclude_query_image}};
}

namespace detail {

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::string render_grid(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::size_t> widths;
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (widths.size() <= c) widths.push_back(0);
      widths[c] = std::max(widths[c], row[c].size());
    }
  std::ostringstream out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const auto pad = widths[c] - row[c].size();
      if (c == 0) {
        line += row[c] + std::string(pad, ' ');
      } else {
        line += "  " + std::string(pad, ' ') + row[c];
      }
    }
    out << line << '\n';
  }
  return out.str();
}

}  // namespace detail

/// Methods as rows, attributes as columns plus Avg; mAP in percent.
inline std::string render_eval_table(const std::vector<EvalReport>& reports) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> attributes;
  for (const auto& r : reports)
    for (const auto& a : r.per_attribute)
      if (std::find(attributes.begin(), attributes.end(), a.attribute) == attributes.end()) attributes.push_back(a.attribute);

  std::vector<std::string> header{"Method"};
  for (const auto& a : attributes) header.push_back(detail::capitalize(a));
  header.push_back("Avg");
  cells.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row{method_label(r.method)};
    for (const auto& a : attributes) {
      auto v = r.map_for(a);
      row.push_back(v ? format_percent(*v) : "-");
    }
    row.push_back(format_percent(r.average_map));
    cells.push_back(std::move(row));
  }
  return detail::render_grid(cells);
}

/// Lambda as columns, attributes as rows plus Average; mAP in percent.
inline std::string render_sweep_table(const SweepReport& s) {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"lambda"};
  for (double l : s.lambda_grid) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", l);
    header.push_back(buf);
  }
  cells.push_back(header);
  for (std::size_t a = 0; a < s.attributes.size(); ++a) {
    std::vector<std::string> row{detail::capitalize(s.attributes[a])};
    for (double v : s.rows[a]) row.push_back(format_percent(v));
    cells.push_back(std::move(row));
  }
  std::vector<std::string> avg{"Average"};
  for (double v : s.average) avg.push_back(format_percent(v));
  cells.push_back(std::move(avg));
  return detail::render_grid(cells);
}

}  // namespace weicom
