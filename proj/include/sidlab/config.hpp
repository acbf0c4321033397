#pragma once

// Run configuration files (YAML). Recognized keys:
//
//   schedule: "MLM×NER→SID"          # `->` / ` x ` also accepted
//   seeds: [1, 2, 3]
//   epochs: 20                        # per stage
//   batch_size: 8
//   learning_rate: 0.001
//   beta1: 0.9
//   beta2: 0.999
//   adam_eps: 1.0e-8
//   dim: 64
//   ff_dim: 128
//   position_encoding: true
//   mask_prob: 0.15
//   mlm_split_per_epoch: true
//   parallel_seeds: true
//   tasks:
//     SID: {kind: sid, train: en.train.conll, dev: en.dev.conll}
//     UD:  {kind: ud, data: maibaam.conllu, split: 0.9, split_seed: 0}
//   eval:
//     de-ba: de-ba.test.conll
//
// A task either names `train` (and optionally `dev`) files or a single `data`
// file divided by `split`. `kind` defaults to the task name when that is one
// of sid/ud/ner/mlm. Relative paths resolve against the config file's
// directory.

#include <yaml-cpp/yaml.h>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "sidlab/corpus.hpp"
#include "sidlab/error.hpp"
#include "sidlab/schedule.hpp"

namespace sidlab {

namespace detail {

template <class T>
T yaml_as(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception& e) {
    throw Error(Errc::InvalidConfig, "bad value for '" + key + "': " + e.what());
  }
}

inline std::string yaml_scalar(const YAML::Node& node) {
  if (node.IsScalar()) return node.Scalar();
  YAML::Emitter out;
  out << YAML::Flow << node;
  return out.c_str();
}

}  // namespace detail

inline RunConfig load_run_config(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw Error(Errc::InvalidConfig, "cannot read config '" + path + "'");
  } catch (const YAML::Exception& e) {
    throw Error(Errc::InvalidConfig, "config '" + path + "': " + e.what());
  }
  if (!root.IsMap()) throw Error(Errc::InvalidConfig, "config '" + path + "' must be a mapping");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&base](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).lexically_normal().string();
  };

  static const std::set<std::string> known{"schedule",   "seeds",         "epochs",   "batch_size",
                                           "learning_rate", "beta1",      "beta2",    "adam_eps",
                                           "dim",        "ff_dim",        "position_encoding", "mask_prob",
                                           "mlm_split_per_epoch", "parallel_seeds", "tasks", "eval"};
  RunConfig c;
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    if (!known.count(key)) throw Error(Errc::InvalidConfig, "unknown config key '" + key + "'");
    const YAML::Node& v = kv.second;
    if (key == "schedule") {
      c.schedule = detail::yaml_as<std::string>(v, key);
    } else if (key == "seeds") {
      c.seeds.clear();
      if (v.IsSequence()) {
        for (const auto& s : v) c.seeds.push_back(detail::yaml_as<std::uint64_t>(s, key));
      } else {
        c.seeds.push_back(detail::yaml_as<std::uint64_t>(v, key));
      }
    } else if (key == "epochs") {
      c.train.max_epochs = detail::yaml_as<std::size_t>(v, key);
    } else if (key == "batch_size") {
      c.train.batch_size = detail::yaml_as<std::size_t>(v, key);
    } else if (key == "learning_rate") {
      c.train.adam.lr = detail::yaml_as<double>(v, key);
    } else if (key == "beta1") {
      c.train.adam.beta1 = detail::yaml_as<double>(v, key);
    } else if (key == "beta2") {
      c.train.adam.beta2 = detail::yaml_as<double>(v, key);
    } else if (key == "adam_eps") {
      c.train.adam.eps = detail::yaml_as<double>(v, key);
    } else if (key == "dim") {
      c.model.dim = detail::yaml_as<std::size_t>(v, key);
    } else if (key == "ff_dim") {
      c.model.ff_dim = detail::yaml_as<std::size_t>(v, key);
    } else if (key == "position_encoding") {
      c.model.position_encoding = detail::yaml_as<bool>(v, key);
    } else if (key == "mask_prob") {
      c.train.mask_prob = detail::yaml_as<double>(v, key);
    } else if (key == "mlm_split_per_epoch") {
      c.train.mlm_split_per_epoch = detail::yaml_as<bool>(v, key);
    } else if (key == "parallel_seeds") {
      c.parallel_seeds = detail::yaml_as<bool>(v, key);
    } else if (key == "tasks") {
      if (!v.IsMap()) throw Error(Errc::InvalidConfig, "'tasks' must be a mapping");
      for (const auto& task : v) {
        const std::string name = task.first.as<std::string>();
        const YAML::Node& spec = task.second;
        if (!spec.IsMap()) throw Error(Errc::InvalidConfig, "task '" + name + "' must be a mapping");
        std::optional<TaskKind> kind = spec["kind"] ? parse_task_kind(detail::yaml_as<std::string>(spec["kind"], "kind"))
                                                    : parse_task_kind(name);
        if (!kind) throw Error(Errc::InvalidConfig, "task '" + name + "' needs a kind (sid, ud, ner or mlm)");
        TaskBinding b;
        b.name = name;
        b.kind = *kind;
        if (spec["data"]) {
          const std::string file = detail::yaml_as<std::string>(spec["data"], "data");
          const double fraction = spec["split"] ? detail::yaml_as<double>(spec["split"], "split") : 0.9;
          const auto split_seed = spec["split_seed"] ? detail::yaml_as<std::uint64_t>(spec["split_seed"], "split_seed") : 0;
          auto [train, dev] = split_dataset(read_dataset(resolve(file), *kind, name), fraction, split_seed);
          b.train = std::move(train);
          b.dev = std::move(dev);
          c.echo.emplace_back("task." + name + ".data", file);
          c.echo.emplace_back("task." + name + ".split", detail::yaml_scalar(spec["split"] ? spec["split"] : YAML::Node(0.9)));
        } else {
          if (!spec["train"]) throw Error(Errc::InvalidConfig, "task '" + name + "' needs 'train' or 'data'");
          const std::string train = detail::yaml_as<std::string>(spec["train"], "train");
          b.train = read_dataset(resolve(train), *kind, name + ".train");
          c.echo.emplace_back("task." + name + ".train", train);
          if (spec["dev"]) {
            const std::string dev = detail::yaml_as<std::string>(spec["dev"], "dev");
            b.dev = read_dataset(resolve(dev), *kind, name + ".dev");
            c.echo.emplace_back("task." + name + ".dev", dev);
          } else {
            b.dev = Dataset{name + ".dev", {}, *kind, {}};
          }
        }
        c.echo.emplace_back("task." + name + ".kind", std::string(to_string(*kind)));
        c.tasks[name] = std::move(b);
      }
    } else if (key == "eval") {
      if (!v.IsMap()) throw Error(Errc::InvalidConfig, "'eval' must map names to files");
      for (const auto& ev : v) {
        const std::string name = ev.first.as<std::string>();
        const std::string file = detail::yaml_as<std::string>(ev.second, "eval." + name);
        c.eval.push_back({name, read_dataset(resolve(file), TaskKind::sid, name, name)});
        c.echo.emplace_back("eval." + name, file);
      }
    }
    if (key != "tasks" && key != "eval") c.echo.emplace_back(key, detail::yaml_scalar(v));
  }
  parse_schedule(c.schedule);
  if (c.seeds.empty()) throw Error(Errc::InvalidConfig, "at least one seed is required");
  if (c.train.max_epochs == 0) throw Error(Errc::InvalidConfig, "epochs must be at least 1");
  if (!(c.train.mask_prob >= 0.0 && c.train.mask_prob <= 1.0)) throw Error(Errc::InvalidConfig, "mask_prob must lie in [0, 1]");
  return c;
}

}  // namespace sidlab
