// weicom: ingest corpora, run composed queries, evaluate and sweep benchmarks,
// generate synthetic data, and serve the query API.

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "weicom/service.hpp"
#include "weicom/weicom.hpp"

namespace {

using namespace weicom;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

int exit_code_for(const Error& e) { return e.code() == ErrorCode::IoError ? kExitIo : kExitValidation; }

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) { detail::write_file(path, text); }

fs::path table_path_for(const fs::path& json_path) {
  fs::path p = json_path;
  p.replace_extension(".txt");
  if (p == json_path) p += ".txt";
  return p;
}

std::vector<Method> parse_methods(const std::string& list, std::optional<double> lambda) {
  std::vector<Method> methods;
  std::stringstream ss(list);
  std::string item;
  bool any_weicom = false;
  while (std::getline(ss, item, ',')) {
    const MethodKind kind = parse_method_kind(item);
    if (kind == MethodKind::WeiCom) {
      any_weicom = true;
      methods.push_back(Method::weicom(lambda.value_or(0.5)));
    } else {
      methods.push_back({kind, kind == MethodKind::TextOnly ? 1.0 : kind == MethodKind::ImageOnly ? 0.0 : 0.5});
    }
  }
  if (methods.empty()) throw UsageError("--method needs at least one method");
  if (lambda && !any_weicom) throw UsageError("--lambda only applies to --method weicom");
  return methods;
}

json corpus_summary(const Corpus& c) { return json{{"count", c.count()}, {"dim", c.dim()}}; }

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string embeddings, metadata, texts, text_meta, out;
};

int cmd_ingest(const IngestArgs& a) {
  auto corpus = ingest({a.embeddings, a.metadata, a.texts, a.text_meta}, a.out);
  std::cerr << "ingested " << corpus.count() << " images and " << corpus.texts().size() << " texts (dim "
            << corpus.dim() << ") into " << a.out << "\n";
  return kExitOk;
}

struct QueryArgs {
  std::string corpus, image_id, text, method = "weicom";
  std::optional<double> lambda;
  std::size_t k = 10;
  bool exclude = false;
};

int cmd_query(const QueryArgs& a) {
  const auto methods = parse_methods(a.method, a.lambda);
  if (methods.size() != 1) throw UsageError("query takes exactly one --method");
  const Method method = methods.front();
  if (method.needs_image() && a.image_id.empty()) throw UsageError("--image-id is required for " + a.method);
  if (method.needs_text() && a.text.empty()) throw UsageError("--text is required for " + a.method);

  const Corpus corpus = load_corpus(a.corpus);
  ComposedQuery q;
  if (!a.image_id.empty()) {
    const auto row = corpus.images().row(corpus.row_of(a.image_id));
    q.image_embedding.assign(row.begin(), row.end());
    q.query_image_id = a.image_id;
  }
  if (!a.text.empty()) {
    const auto t = get_text_embedding(corpus, a.text);
    q.text_embedding.assign(t.begin(), t.end());
  }
  const bool exclude = a.exclude && q.query_image_id.has_value();
  const auto ranked = retrieve(q, corpus, method, a.k, exclude);

  json results = json::array();
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& rec = corpus.record(ranked[i].row);
    results.push_back({{"rank", i + 1}, {"id", ranked[i].id}, {"score", ranked[i].score}, {"class", rec.class_name},
                       {"attributes", rec.attributes}});
  }
  json out{{"results", results},
           {"method", method_name(method.kind)},
           {"lambda", method.kind == MethodKind::WeiCom ? json(method.lambda) : json(nullptr)},
           {"k", a.k},
           {"exclude_query_image", exclude}};
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

struct EvaluateArgs {
  std::string corpus, benchmark, method, out, suite_out, encoder;
  std::optional<double> lambda;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto methods = parse_methods(a.method, a.lambda);
  const Corpus corpus = load_corpus(a.corpus);
  const auto suite = build_queries(corpus, read_benchmark_spec(a.benchmark));
  if (!a.suite_out.empty()) write_suite_jsonl(a.suite_out, suite);

  std::vector<EvalReport> reports;
  json report_json = json::array();
  for (const auto& m : methods) {
    reports.push_back(evaluate(corpus, suite, m));
    report_json.push_back(to_json(reports.back()));
  }
  json doc{{"corpus", corpus_summary(corpus)}, {"exclude_query_image", true}, {"reports", report_json}};
  if (!a.encoder.empty()) doc["encoder"] = a.encoder;
  for (const auto& r : reports)
    if (r.dropped_queries > 0) std::cerr << "warning: dropped " << r.dropped_queries << " queries with no positives\n";

  const std::string table = render_eval_table(reports);
  write_text(a.out, doc.dump(2) + "\n");
  write_text(table_path_for(a.out), table);
  std::cout << table;
  return kExitOk;
}

struct SweepArgs {
  std::string corpus, benchmark, lambdas = "0:1:0.1", out, encoder;
};

int cmd_sweep(const SweepArgs& a) {
  const auto grid = parse_lambda_grid(a.lambdas);
  const Corpus corpus = load_corpus(a.corpus);
  const auto suite = build_queries(corpus, read_benchmark_spec(a.benchmark));
  const auto sweep = lambda_sweep(corpus, suite, grid);

  json doc = to_json(sweep);
  doc["corpus"] = corpus_summary(corpus);
  if (!a.encoder.empty()) doc["encoder"] = a.encoder;
  const std::string table = render_sweep_table(sweep);
  write_text(a.out, doc.dump(2) + "\n");
  write_text(table_path_for(a.out), table);
  std::cout << table;
  char best[96];
  std::snprintf(best, sizeof best, "best lambda %.2f (average mAP %s)\n", sweep.best_lambda(),
                format_percent(sweep.average[sweep.best_index]).c_str());
  std::cout << best;
  return kExitOk;
}

struct ServeArgs {
  std::string corpus, listen = "127.0.0.1:8080", images, benchmark, cors_origin;
};

int cmd_serve(const ServeArgs& a) {
  const auto colon = a.listen.rfind(':');
  if (colon == std::string::npos) throw UsageError("--listen expects HOST:PORT");
  std::string host = a.listen.substr(0, colon);
  if (host.empty()) host = "0.0.0.0";
  int port = 0;
  try {
    port = std::stoi(a.listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--listen has a bad port");
  }

  ServiceConfig config;
  if (!a.images.empty()) config.images_dir = fs::path(a.images);
  if (!a.benchmark.empty()) config.benchmark = read_benchmark_spec(a.benchmark);
  config.cors_origin = a.cors_origin;
  Service service(std::move(config));

  httplib::Server server;
  service.install(server);
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + a.listen);
  std::cerr << "listening on " << host << ":" << bound << "\n";

  std::thread listener([&] { server.listen_after_bind(); });
  try {
    service.set_corpus(std::make_shared<const Corpus>(load_corpus(a.corpus)));
  } catch (...) {
    server.stop();
    listener.join();
    throw;
  }
  std::cerr << "corpus loaded: " << service.corpus()->count() << " images\n";
  listener.join();
  return kExitOk;
}

struct SyntheticArgs {
  SyntheticConfig config;
  std::string out;
};

int cmd_gen_synthetic(const SyntheticArgs& a) {
  const auto data = generate_synthetic(a.config);
  write_synthetic(data, a.out);
  std::cerr << "wrote " << data.corpus.count() << " synthetic images to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Composed image retrieval engine: weighted fusion of image and text similarities"};
  app.require_subcommand(1);

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Validate, renormalize and persist an embedding corpus");
  ingest_cmd->add_option("--embeddings", ingest_args.embeddings, "WCEM image embeddings")->required();
  ingest_cmd->add_option("--metadata", ingest_args.metadata, "JSONL image metadata")->required();
  ingest_cmd->add_option("--texts", ingest_args.texts, "WCEM text embeddings")->required();
  ingest_cmd->add_option("--text-meta", ingest_args.text_meta, "JSONL text sidecar")->required();
  ingest_cmd->add_option("--out", ingest_args.out, "Output corpus directory")->required();

  QueryArgs query_args;
  auto* query_cmd = app.add_subcommand("query", "Run one composed query");
  query_cmd->add_option("--corpus", query_args.corpus)->required();
  query_cmd->add_option("--image-id", query_args.image_id);
  query_cmd->add_option("--text", query_args.text);
  query_cmd->add_option("--method", query_args.method, "text_only|image_only|average|weicom");
  query_cmd->add_option("--lambda", query_args.lambda, "WeiCom modality weight in [0,1]");
  query_cmd->add_option("--k", query_args.k)->check(CLI::PositiveNumber);
  query_cmd->add_flag("--exclude-query", query_args.exclude, "Drop the query image from the ranking");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "mAP of one or more methods on a benchmark spec");
  eval_cmd->add_option("--corpus", eval_args.corpus)->required();
  eval_cmd->add_option("--benchmark", eval_args.benchmark, "Benchmark spec JSON")->required();
  eval_cmd->add_option("--method", eval_args.method, "Method, or comma-separated methods")->required();
  eval_cmd->add_option("--lambda", eval_args.lambda, "WeiCom modality weight (default 0.5)");
  eval_cmd->add_option("--out", eval_args.out, "Report JSON; the text table goes next to it as .txt")->required();
  eval_cmd->add_option("--suite-out", eval_args.suite_out, "Also write the generated queries as JSONL");
  eval_cmd->add_option("--encoder", eval_args.encoder, "Encoder label recorded in the report");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "WeiCom mAP over a lambda grid");
  sweep_cmd->add_option("--corpus", sweep_args.corpus)->required();
  sweep_cmd->add_option("--benchmark", sweep_args.benchmark)->required();
  sweep_cmd->add_option("--lambdas", sweep_args.lambdas, "START:STOP:STEP or comma list");
  sweep_cmd->add_option("--out", sweep_args.out)->required();
  sweep_cmd->add_option("--encoder", sweep_args.encoder, "Encoder label recorded in the report");

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the JSON-over-HTTP query API");
  serve_cmd->add_option("--corpus", serve_args.corpus)->required();
  serve_cmd->add_option("--listen", serve_args.listen, "HOST:PORT");
  serve_cmd->add_option("--images", serve_args.images, "Directory of <id>.<ext> thumbnails");
  serve_cmd->add_option("--benchmark", serve_args.benchmark, "Benchmark spec used to group the vocabulary");
  serve_cmd->add_option("--cors-origin", serve_args.cors_origin, "Allowed browser origin, e.g. http://localhost:5173");

  SyntheticArgs syn_args;
  auto* syn_cmd = app.add_subcommand("gen-synthetic", "Write a planted-structure corpus and benchmark spec");
  syn_cmd->add_option("--classes", syn_args.config.classes)->check(CLI::PositiveNumber);
  syn_cmd->add_option("--values", syn_args.config.values)->check(CLI::Range(2, 1 << 20));
  syn_cmd->add_option("--per-cell", syn_args.config.per_cell)->check(CLI::PositiveNumber);
  syn_cmd->add_option("--dim", syn_args.config.dim)->check(CLI::PositiveNumber);
  syn_cmd->add_option("--seed", syn_args.config.seed);
  syn_cmd->add_option("--alpha", syn_args.config.alpha, "Value-direction weight in image embeddings");
  syn_cmd->add_option("--beta", syn_args.config.beta, "Noise weight in text embeddings");
  syn_cmd->add_option("--noise", syn_args.config.noise, "Noise weight in image embeddings");
  syn_cmd->add_option("--out", syn_args.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(ingest_args);
    if (*query_cmd) return cmd_query(query_args);
    if (*eval_cmd) return cmd_evaluate(eval_args);
    if (*sweep_cmd) return cmd_sweep(sweep_args);
    if (*serve_cmd) return cmd_serve(serve_args);
    if (*syn_cmd) return cmd_gen_synthetic(syn_args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitValidation;
}
