#include "pare/checkpoint.h"

#include "pare/error.h"
#include "pare/params.h"

namespace pare {
namespace {

template <class P>
void add_prefixed(TensorArchive& ar, const std::string& prefix, const P& params) {
  params.for_each([&](const std::string& name, const Tensor& t) { ar.add(prefix + name, t); });
}

template <class P>
void read_prefixed(const TensorArchive& ar, const std::string& prefix, P& params) {
  params.for_each([&](const std::string& name, Tensor& t) { t = ar.get(prefix + name); });
}

void add_moments(TensorArchive& ar, const std::string& prefix, const Adam& opt,
                 const std::vector<Tensor>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    ar.add(prefix + "m." + std::to_string(i), Tensor(params[i].shape(), opt.first()[i]));
    ar.add(prefix + "v." + std::to_string(i), Tensor(params[i].shape(), opt.second()[i]));
  }
  ar.meta()[prefix + "steps"] = opt.steps();
}

void read_moments(const TensorArchive& ar, const std::string& prefix, Adam& opt,
                  std::size_t count) {
  if (!ar.meta().contains(prefix + "steps")) return;
  std::vector<std::vector<double>> m, v;
  for (std::size_t i = 0; i < count; ++i) {
    m.push_back(ar.get(prefix + "m." + std::to_string(i)).to_vector());
    v.push_back(ar.get(prefix + "v." + std::to_string(i)).to_vector());
  }
  opt.restore(ar.meta().at(prefix + "steps").get<std::size_t>(), std::move(m), std::move(v));
}

}  // namespace

void add_model(TensorArchive& ar, const DiTParams& p) {
  ar.meta()["model_config"] = to_json(p.config);
  add_prefixed(ar, "model.", p);
}

DiTParams read_model(const TensorArchive& ar) {
  if (!ar.meta().contains("model_config")) throw IoError("checkpoint has no model configuration");
  DiTParams p;
  p.config = dit_config_from_json(ar.meta().at("model_config"));
  p.blocks.resize(p.config.n_blocks);
  for (BlockParams& b : p.blocks) {
    if (p.config.image_stream) b.cross_image.emplace();
  }
  read_prefixed(ar, "model.", p);
  const std::size_t hd = p.config.head_dim;
  for (const BlockParams& b : p.blocks) {
    if (b.self_attn.wq.rank() != 2 || b.self_attn.wq.dim(0) % hd != 0 ||
        b.ffn_up.rank() != 2 || b.ffn_down.rank() != 2) {
      throw IoError("checkpoint holds malformed block tensors");
    }
  }
  return p;
}

void add_router(TensorArchive& ar, const RouterParams& r) {
  ar.meta()["router"] = {{"config", to_json(r.config)}, {"mode", mode_name(r.mode)}};
  add_prefixed(ar, "router.", r);
}

std::optional<RouterParams> read_router(const TensorArchive& ar) {
  if (!ar.meta().contains("router")) return std::nullopt;
  RouterParams r;
  r.config = router_config_from_json(ar.meta().at("router").at("config"));
  r.mode = parse_mode(ar.meta().at("router").at("mode").get<std::string>());
  read_prefixed(ar, "router.", r);
  return r;
}

TensorArchive state_archive(const TrainState& s) {
  TensorArchive ar;
  add_model(ar, s.student);
  add_moments(ar, "adam.student.", s.student_opt, parameter_list(s.student));
  if (s.router) {
    add_router(ar, *s.router);
    add_moments(ar, "adam.router.", s.router_opt, parameter_list(*s.router));
  }
  ar.meta()["step"] = s.step;
  ar.meta()["from_stage1"] = s.from_stage1;
  ar.meta()["loss_history"] = s.loss_history;
  return ar;
}

TrainState read_state(const TensorArchive& ar) {
  TrainState s = make_train_state(read_model(ar), read_router(ar),
                                  ar.meta().value("from_stage1", false));
  read_moments(ar, "adam.student.", s.student_opt, parameter_list(s.student).size());
  if (s.router) read_moments(ar, "adam.router.", s.router_opt, parameter_list(*s.router).size());
  s.step = ar.meta().value("step", std::size_t{0});
  s.loss_history = ar.meta().value("loss_history", std::vector<double>{});
  return s;
}

}  // namespace pare
