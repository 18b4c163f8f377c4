#include "ntl/protection.hpp"

#include <algorithm>

#include "ntl/errors.hpp"

namespace ntl::protection {

namespace {

domains::DomainDataset patched_or_throw(const domains::DomainDataset& source,
                                        const domains::PatchSpec& patch) {
  domains::DomainDataset aux = domains::apply_patch(source, patch);
  if (aux.pixels == source.pixels) {
    throw DegenerateAuxiliaryError("patch does not modify the source domain (v=" +
                                   std::to_string(patch.v) + ")");
  }
  return aux;
}

// Concatenation that keeps provenance aligned; `tag` fills parts without one.
void append_part(domains::DomainDataset& out, const domains::DomainDataset& part,
                 const std::string& tag) {
  out.pixels.insert(out.pixels.end(), part.pixels.begin(), part.pixels.end());
  out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  for (std::int64_t i = 0; i < part.count(); ++i) {
    out.provenance.push_back(part.provenance.empty()
                                 ? tag
                                 : part.provenance[static_cast<std::size_t>(i)]);
  }
}

}  // namespace

objective::TrainResult train_ownership(models::ModelBundle& model,
                                       const domains::DomainDataset& source,
                                       const domains::PatchSpec& patch,
                                       const objective::NtlConfig& cfg,
                                       const domains::DomainDataset* eval_source) {
  source.validate();
  const domains::DomainDataset aux = patched_or_throw(source, patch);
  const domains::DomainDataset* es = eval_source ? eval_source : &source;
  const domains::DomainDataset ea = domains::apply_patch(*es, patch);
  return objective::train_target_specified(model, source, aux, cfg, es, &ea);
}

VerificationReport verify_ownership(models::ModelBundle& model,
                                    const domains::DomainDataset& source_test,
                                    const domains::PatchSpec& patch, double threshold) {
  VerificationReport r;
  r.threshold = threshold;
  r.acc_without_patch = objective::evaluate_accuracy(model, source_test);
  r.acc_with_patch =
      objective::evaluate_accuracy(model, domains::apply_patch(source_test, patch));
  r.gap = r.acc_without_patch - r.acc_with_patch;
  r.verified = r.gap >= threshold;
  return r;
}

AuthorizedResult train_authorized(models::ModelBundle& model,
                                  const domains::DomainDataset& source,
                                  const domains::PatchSpec& patch,
                                  const augment::AugConfig& aug_cfg,
                                  const objective::NtlConfig& cfg,
                                  const domains::DomainDataset* precomputed_aux,
                                  const domains::DomainDataset* eval_source) {
  aug_cfg.validate();
  source.validate();
  const domains::DomainDataset patched_source = patched_or_throw(source, patch);
  const domains::DomainDataset gen =
      precomputed_aux ? *precomputed_aux : augment::generate_auxiliary(source, aug_cfg);
  gen.validate();

  // Equal thirds; sizes are clamped to the smaller of the two pools.
  const std::int64_t third = std::min(source.count(), gen.count());
  const domains::DomainDataset source_part =
      source.count() == third ? source : domains::subset(source, third, Rng::derive(cfg.seed, 0x3A));
  const domains::DomainDataset gen_part =
      gen.count() == third ? gen : domains::subset(gen, third, Rng::derive(cfg.seed, 0x3B));
  const domains::DomainDataset gen_patched = domains::apply_patch(gen_part, patch);

  AuthorizedResult result;
  result.auxiliary.name = "auth-aux:" + source.name;
  result.auxiliary.num_classes = source.num_classes;
  result.auxiliary.channels = source.channels;
  result.auxiliary.height = source.height;
  result.auxiliary.width = source.width;
  append_part(result.auxiliary, source_part, "source");
  append_part(result.auxiliary, gen_part, "gen");
  append_part(result.auxiliary, gen_patched, "gen");
  for (std::size_t i = result.auxiliary.provenance.size() - static_cast<std::size_t>(third);
       i < result.auxiliary.provenance.size(); ++i) {
    result.auxiliary.provenance[i] += "+patch";
  }
  result.auxiliary.validate();

  const domains::DomainDataset* es = eval_source ? eval_source : &source;
  const domains::DomainDataset authorized_eval = domains::apply_patch(*es, patch);
  result.history = objective::train_target_specified(model, patched_source, result.auxiliary, cfg,
                                                     &authorized_eval, es);
  return result;
}

AuthorizationReport evaluate_authorization(models::ModelBundle& model,
                                           const std::vector<const domains::DomainDataset*>& domains_list,
                                           const domains::PatchSpec& patch) {
  if (domains_list.empty()) throw ConfigError("evaluate_authorization: no domains given");
  const std::int64_t k = domains_list.front()->num_classes;
  for (const auto* d : domains_list) {
    if (d->num_classes != k) {
      throw ConfigError("evaluate_authorization: domains disagree on num_classes");
    }
  }
  AuthorizationReport report;
  report.max_unauthorized = 0.0;
  for (std::size_t i = 0; i < domains_list.size(); ++i) {
    const auto& d = *domains_list[i];
    const double patched_acc =
        objective::evaluate_accuracy(model, domains::apply_patch(d, patch));
    const double clean_acc = objective::evaluate_accuracy(model, d);
    if (i == 0) {
      report.authorized_acc = patched_acc;
    } else {
      report.unauthorized.push_back({d.name, true, patched_acc});
    }
    report.unauthorized.push_back({d.name, false, clean_acc});
  }
  for (const auto& cell : report.unauthorized) {
    report.max_unauthorized = std::max(report.max_unauthorized, cell.acc);
  }
  return report;
}

}  // namespace ntl::protection
