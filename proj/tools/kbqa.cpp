// Command line front end: KB loading, pseudo-gold search, pretraining,
// policy-gradient training, evaluation, and single-question answering.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <kbqa/dataset.hpp>
#include <kbqa/eval.hpp>
#include <kbqa/executor.hpp>
#include <kbqa/kb.hpp>
#include <kbqa/policy.hpp>
#include <kbqa/reward.hpp>
#include <kbqa/search.hpp>
#include <kbqa/trainer.hpp>

namespace {

struct SharedArgs {
  std::string triples;
  std::string types;
  std::string reward_config;
};

kbqa::RewardConfig reward_config_of(const SharedArgs& shared) {
  if (shared.reward_config.empty()) return {};
  return kbqa::load_reward_config(shared.reward_config);
}

std::vector<std::string> vocab_of(const std::vector<kbqa::Example>& data) {
  std::set<std::string> seen;
  for (const kbqa::Example& ex : data) seen.insert(ex.tokens.begin(), ex.tokens.end());
  return {seen.begin(), seen.end()};
}

void print_report(const kbqa::EvalReport& report) {
  std::printf("%-22s %6s %8s\n", "category", "n", "F1");
  std::size_t total = 0;
  for (const auto& [category, score] : report.per_category) {
    std::printf("%-22s %6zu %8.3f\n", category.c_str(), score.n, score.mean_f1);
    total += score.n;
  }
  std::printf("%-22s %6zu %8.3f\n", "macro", total, report.macro_f1);
  std::printf("%-22s %6zu %8.3f\n", "micro", total, report.micro_f1);
}

nlohmann::json report_to_json(const kbqa::EvalReport& report) {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [category, score] : report.per_category)
    per[category] = {{"n", score.n}, {"f1", score.mean_f1}};
  return {{"per_category", per}, {"macro_f1", report.macro_f1}, {"micro_f1", report.micro_f1}};
}

int run_load_kb(const SharedArgs& shared) {
  const kbqa::KnowledgeBase kb = kbqa::load_kb(shared.triples, shared.types);
  std::size_t typed = 0;
  for (const auto& [type, members] : kb.type_members()) typed += members.size();
  std::printf("symbols  %zu\n", kb.symbols.size());
  std::printf("triples  %zu\n", kb.triples().size());
  std::printf("types    %zu (%zu typed entities)\n", kb.type_members().size(), typed);
  return 0;
}

int run_oracle(const SharedArgs& shared, const std::string& data_path,
               const std::string& out_path, int max_len, int limit) {
  const kbqa::KnowledgeBase kb = kbqa::load_kb(shared.triples, shared.types);
  std::vector<kbqa::Example> data = kbqa::load_dataset(data_path, kb);
  kbqa::SearchOptions opt;
  opt.n_max = max_len;
  opt.limit = limit;
  opt.reward = reward_config_of(shared);
  std::size_t covered = 0, programs = 0;
  std::vector<std::string> uncovered;
  for (kbqa::Example& ex : data) {
    ex.pseudo_gold = kbqa::bfs_search(ex.table, kb, ex.gold, opt);
    programs += ex.pseudo_gold.size();
    if (ex.pseudo_gold.empty())
      uncovered.push_back(ex.question_id);
    else
      ++covered;
  }
  kbqa::save_dataset(out_path, kb, data);
  std::printf("covered  %zu/%zu questions (%zu programs)\n", covered, data.size(), programs);
  for (const std::string& id : uncovered) std::printf("no program: %s\n", id.c_str());
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int run_pretrain(const SharedArgs& shared, const std::string& data_path,
                 const std::string& save_path, kbqa::TrainConfig cfg, int d_model,
                 int max_len) {
  const kbqa::KnowledgeBase kb = kbqa::load_kb(shared.triples, shared.types);
  const std::vector<kbqa::Example> data = kbqa::load_dataset(data_path, kb);
  kbqa::PolicyConfig pcfg;
  pcfg.d_e = d_model;
  pcfg.d_q = d_model;
  pcfg.max_len = max_len;
  kbqa::Policy policy(vocab_of(data), pcfg, cfg.seed);
  const kbqa::PretrainResult result = kbqa::pretrain(policy, data, cfg);
  std::printf("examples %zu, vocab %zu\n", data.size(), policy.input_vocab().size());
  std::printf("initial ce %.4f\n", result.initial_loss);
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    std::printf("epoch %3zu ce %.4f\n", e + 1, result.epoch_loss[e]);
  policy.save(save_path);
  std::printf("wrote %s\n", save_path.c_str());
  return 0;
}

int run_train_rl(const SharedArgs& shared, const std::string& data_path,
                 const std::string& checkpoint, const std::string& save_path,
                 const std::string& memory_out, kbqa::TrainConfig cfg) {
  const kbqa::KnowledgeBase kb = kbqa::load_kb(shared.triples, shared.types);
  const std::vector<kbqa::Example> data = kbqa::load_dataset(data_path, kb);
  kbqa::Policy policy = kbqa::Policy::load(checkpoint);
  const kbqa::RewardConfig rcfg = reward_config_of(shared);
  const kbqa::RlResult result = kbqa::train_rl(policy, data, kb, rcfg, cfg);
  std::printf("train %zu, heldout %zu\n", result.train_count, result.heldout_count);
  for (const kbqa::RlEpochStats& s : result.epochs)
    std::printf("epoch %3d lambda %.3f heldout %.4f loss %+.5f\n", s.epoch, s.lambda,
                s.heldout_reward, s.mean_loss);
  policy.save(save_path);
  std::printf("wrote %s\n", save_path.c_str());
  if (!memory_out.empty()) {
    result.memory.save(memory_out);
    std::printf("wrote %s (%zu remembered questions)\n", memory_out.c_str(),
                result.memory.question_count());
  }
  return 0;
}

int run_eval(const SharedArgs& shared, const std::string& data_path,
             const std::string& checkpoint, const std::string& out_path,
             const kbqa::EvalConfig& cfg) {
  const kbqa::KnowledgeBase kb = kbqa::load_kb(shared.triples, shared.types);
  const std::vector<kbqa::Example> data = kbqa::load_dataset(data_path, kb);
  const kbqa::Policy policy = kbqa::Policy::load(checkpoint);
  const kbqa::EvalReport report = kbqa::evaluate(policy, data, kb, cfg);
  print_report(report);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write " + out_path);
    out << report_to_json(report).dump(2) << '\n';
    std::printf("wrote %s\n", out_path.c_str());
  }
  return 0;
}

int run_answer(const SharedArgs& shared, const std::string& data_path, const std::string& id,
               const std::string& checkpoint, int beam_width, int max_len, int limit) {
  const kbqa::KnowledgeBase kb = kbqa::load_kb(shared.triples, shared.types);
  const std::vector<kbqa::Example> data = kbqa::load_dataset(data_path, kb);
  const kbqa::Example* ex = nullptr;
  for (const kbqa::Example& e : data)
    if (e.question_id == id) ex = &e;
  if (!ex) throw std::runtime_error("no question with id " + id);

  std::string question;
  for (std::size_t i = 0; i < ex->tokens.size(); ++i)
    question += (i ? " " : "") + ex->tokens[i];
  std::printf("question: %s\n", question.c_str());

  std::optional<kbqa::ActionSequence> program;
  if (!checkpoint.empty()) {
    const kbqa::Policy policy = kbqa::Policy::load(checkpoint);
    const auto trials = policy.beam_sample(policy.encode(ex->tokens), 1, std::max(1, beam_width));
    if (!trials.empty()) {
      try {
        program = kbqa::parse_tokens(trials.front().tokens, max_len);
      } catch (const kbqa::MalformedProgram&) {
      }
    }
    if (!program) throw std::runtime_error("decoded program is malformed for " + id);
  } else {
    kbqa::SearchOptions opt;
    opt.n_max = max_len;
    opt.limit = limit;
    opt.reward = reward_config_of(shared);
    const auto found = kbqa::bfs_search(ex->table, kb, ex->gold, opt);
    if (found.empty()) throw std::runtime_error("search found no program for " + id);
    program = found.front();
  }

  std::printf("program:  %s\n", kbqa::to_text(*program).c_str());
  const kbqa::GroundedSequence grounded = kbqa::unmask(*program, ex->table);
  const std::vector<kbqa::WorkingDict> trace = kbqa::execute_trace(grounded, kb);
  for (std::size_t i = 0; i < program->actions.size(); ++i) {
    if (program->actions[i].op == kbqa::Operator::EOQ) continue;
    kbqa::ActionSequence one;
    one.actions = {program->actions[i]};
    std::printf("  %-28s -> %s\n", kbqa::to_text(one).c_str(),
                kbqa::format_dict(kb, trace[i]).c_str());
  }
  const std::optional<kbqa::Answer> answer = kbqa::run_program(*program, ex->table, kb);
  if (!answer) throw std::runtime_error("program failed to execute for " + id);
  std::printf("answer:   %s\n", kbqa::format_answer(kb, *answer).c_str());
  std::printf("gold:     %s (%s)\n", kbqa::format_answer(kb, ex->gold).c_str(),
              *answer == ex->gold ? "match" : "mismatch");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge base question answering over masked action programs"};
  app.require_subcommand(1);
  app.fallthrough();

  SharedArgs shared;
  app.add_option("--triples", shared.triples, "KB triples TSV")->required();
  app.add_option("--types", shared.types, "entity type TSV")->required();
  app.add_option("--reward-config", shared.reward_config, "key=value reward settings");

  CLI::App* load = app.add_subcommand("load-kb", "load the KB and print its size");

  std::string data_path, out_path;
  int oracle_max_len = kbqa::kDefaultMaxActions, oracle_limit = 20;
  CLI::App* oracle = app.add_subcommand("oracle", "search pseudo-gold programs for a dataset");
  oracle->add_option("--data", data_path, "questions JSONL")->required();
  oracle->add_option("--out", out_path, "annotated JSONL to write")->required();
  oracle->add_option("--max-len", oracle_max_len, "program length bound, EOQ included");
  oracle->add_option("--limit", oracle_limit, "programs kept per question");

  kbqa::TrainConfig tcfg;
  std::string ckpt_in, ckpt_out, memory_out;
  int d_model = 32;
  int decode_max_len = 21;
  CLI::App* pre = app.add_subcommand("pretrain", "teacher forcing on pseudo-gold programs");
  pre->add_option("--data", data_path, "annotated JSONL")->required();
  pre->add_option("--save", ckpt_out, "checkpoint to write")->required();
  pre->add_option("--epochs", tcfg.pretrain_epochs, "pretraining epochs");
  pre->add_option("--lr", tcfg.pretrain_lr, "learning rate");
  pre->add_option("--batch", tcfg.pretrain_batch, "batch size");
  pre->add_option("--seed", tcfg.seed, "RNG seed");
  pre->add_option("--d-model", d_model, "embedding and hidden size");
  pre->add_option("--max-len", decode_max_len, "decoder token budget");
  pre->add_option("--checkpoint-dir", tcfg.checkpoint_dir, "per-epoch checkpoint directory");
  pre->add_option("--log", tcfg.log_path, "CSV training log");
  pre->add_flag("--adam", tcfg.use_adam, "Adam instead of plain ascent");

  CLI::App* rl = app.add_subcommand("train-rl", "policy gradient from answer rewards");
  rl->add_option("--data", data_path, "questions JSONL")->required();
  rl->add_option("--checkpoint", ckpt_in, "pretrained policy to start from")->required();
  rl->add_option("--save", ckpt_out, "checkpoint to write")->required();
  rl->add_option("--epochs", tcfg.rl_epochs, "training epochs");
  rl->add_option("--lr", tcfg.rl_lr, "learning rate");
  rl->add_option("--batch", tcfg.rl_batch, "questions per update");
  rl->add_option("--trials", tcfg.k_trials, "sampled trials per question");
  rl->add_option("--seed", tcfg.seed, "RNG seed");
  rl->add_option("--n-max", tcfg.n_max, "action budget when executing trials");
  rl->add_option("--holdout", tcfg.holdout_fraction, "held-out fraction");
  rl->add_option("--memory-capacity", tcfg.memory_capacity, "programs kept per question");
  rl->add_option("--memory-out", memory_out, "write the final memory buffer here");
  rl->add_option("--checkpoint-dir", tcfg.checkpoint_dir, "per-epoch checkpoint directory");
  rl->add_option("--log", tcfg.log_path, "CSV training log");
  rl->add_flag("--adam", tcfg.use_adam, "Adam instead of plain ascent");
  bool no_crb = false;
  rl->add_flag("--no-crb", no_crb, "disable the memory buffer and proximity bonus");

  kbqa::EvalConfig ecfg;
  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint on a dataset");
  ev->add_option("--data", data_path, "questions JSONL")->required();
  ev->add_option("--checkpoint", ckpt_in, "policy checkpoint")->required();
  ev->add_option("--out", out_path, "JSON report to write");
  ev->add_option("--beam", ecfg.beam_width, "beam width, 1 is greedy");
  ev->add_option("--n-max", ecfg.n_max, "action budget");

  std::string question_id;
  int answer_beam = 5, answer_max_len = kbqa::kDefaultMaxActions, answer_limit = 20;
  CLI::App* ans = app.add_subcommand("answer", "run one question and print the trace");
  ans->add_option("--data", data_path, "questions JSONL")->required();
  ans->add_option("--id", question_id, "question id")->required();
  ans->add_option("--checkpoint", ckpt_in, "decode with this policy; omit to search");
  ans->add_option("--beam", answer_beam, "beam width when decoding");
  ans->add_option("--max-len", answer_max_len, "program length bound");
  ans->add_option("--limit", answer_limit, "search width when no checkpoint is given");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*load) return run_load_kb(shared);
    if (*oracle) return run_oracle(shared, data_path, out_path, oracle_max_len, oracle_limit);
    if (*pre) return run_pretrain(shared, data_path, ckpt_out, tcfg, d_model, decode_max_len);
    if (*rl) {
      tcfg.use_crb_memory = !no_crb;
      return run_train_rl(shared, data_path, ckpt_in, ckpt_out, memory_out, tcfg);
    }
    if (*ev) return run_eval(shared, data_path, ckpt_in, out_path, ecfg);
    if (*ans)
      return run_answer(shared, data_path, question_id, ckpt_in, answer_beam, answer_max_len,
                        answer_limit);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
