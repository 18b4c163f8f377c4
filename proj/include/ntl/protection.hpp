#pragma once

#include <string>
#include <vector>

#include "ntl/augmentation.hpp"
#include "ntl/domains.hpp"
#include "ntl/models.hpp"
#include "ntl/objective.hpp"

namespace ntl::protection {

struct VerificationReport {
  double acc_without_patch = 0.0;
  double acc_with_patch = 0.0;
  double gap = 0.0;
  double threshold = 0.5;
  bool verified = false;
};

struct AuthCell {
  std::string domain;
  bool patched = false;
  double acc = 0.0;
};

struct AuthorizationReport {
  double authorized_acc = 0.0;
  std::vector<AuthCell> unauthorized;
  double max_unauthorized = 0.0;
};

// Ownership workflow: target-specified NTL with the patched source as the
// auxiliary domain. The model trains in place; history is returned. Throws
// DegenerateAuxiliaryError when the patch leaves the source bytes unchanged.
objective::TrainResult train_ownership(models::ModelBundle& model,
                                       const domains::DomainDataset& source,
                                       const domains::PatchSpec& patch,
                                       const objective::NtlConfig& cfg,
                                       const domains::DomainDataset* eval_source = nullptr);

// Evaluates both patch states of `source_test`; verified iff gap >= threshold.
VerificationReport verify_ownership(models::ModelBundle& model,
                                    const domains::DomainDataset& source_test,
                                    const domains::PatchSpec& patch, double threshold = 0.5);

struct AuthorizedResult {
  objective::TrainResult history;
  // The auxiliary union actually trained against (equal thirds of original
  // source, generated neighborhood data, and its patched copy).
  domains::DomainDataset auxiliary;
};

// Authorization workflow: source-only NTL where the authorized domain is the
// patched source. `precomputed_aux` skips the internal generate_auxiliary
// call (it must be generated neighborhood data for the same source).
AuthorizedResult train_authorized(models::ModelBundle& model,
                                  const domains::DomainDataset& source,
                                  const domains::PatchSpec& patch,
                                  const augment::AugConfig& aug_cfg,
                                  const objective::NtlConfig& cfg,
                                  const domains::DomainDataset* precomputed_aux = nullptr,
                                  const domains::DomainDataset* eval_source = nullptr);

// Full (domain x {patched, clean}) accuracy grid. The authorized cell is
// (domains_list[0], patched); every other cell is unauthorized.
AuthorizationReport evaluate_authorization(models::ModelBundle& model,
                                           const std::vector<const domains::DomainDataset*>& domains_list,
                                           const domains::PatchSpec& patch);

}  // namespace ntl::protection
