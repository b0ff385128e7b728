#include "kinact/biomech.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "kinact/error.hpp"
#include "kinact/ndjson.hpp"

namespace kinact::biomech {

Rigid BasePose::transform() const {
  Rigid t = Rigid::Identity();
  t.linear() = exp_so3(rotation);
  t.translation() = translation;
  return t;
}

BasePose BasePose::from_transform(const Rigid& t) {
  return {t.translation(), log_so3(t.linear())};
}

namespace {

[[noreturn]] void invalid(const std::string& what) { fail(ErrorCode::kModelValidation, what); }

Vec3 read_vec3(const nlohmann::json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 3) invalid(ctx + ": expected 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Side parse_side(const std::string& s) {
  if (s == "left") return Side::kLeft;
  if (s == "right") return Side::kRight;
  if (s == "center") return Side::kCenter;
  invalid("unknown body side \"" + s + "\"");
}

std::string side_name(Side s) {
  switch (s) {
    case Side::kLeft: return "left";
    case Side::kRight: return "right";
    case Side::kCenter: return "center";
  }
  return "center";
}

template <typename T>
int find_named(const std::vector<T>& items, std::string_view name) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

BiomechModel BiomechModel::from_json(const nlohmann::json& doc) {
  BiomechModel m;
  try {
    m.name_ = doc.value("name", "model");
    for (const auto& s : doc.at("segments")) {
      Segment seg;
      seg.name = s.at("name").get<std::string>();
      seg.offset = read_vec3(s.at("offset"), "segment " + seg.name);
      seg.scale = s.value("scale", 1.0);
      const std::string parent = s.value("parent", "");
      if (!parent.empty()) {
        seg.parent = find_named(m.segments_, parent);
        if (seg.parent < 0) invalid("segment " + seg.name + ": parent must be declared first");
      }
      if (find_named(m.segments_, seg.name) >= 0) invalid("duplicate segment " + seg.name);
      m.segments_.push_back(std::move(seg));
    }
    for (const auto& j : doc.at("joints")) {
      Joint joint;
      joint.name = j.at("name").get<std::string>();
      joint.segment = find_named(m.segments_, j.at("segment").get<std::string>());
      if (joint.segment < 0) invalid("joint " + joint.name + ": unknown segment");
      joint.axis = read_vec3(j.at("axis"), "joint " + joint.name);
      joint.lower = j.at("lower").get<double>();
      joint.upper = j.at("upper").get<double>();
      joint.side = parse_side(j.value("side", "center"));
      m.joints_.push_back(std::move(joint));
    }
    auto read_attachments = [&](const char* key, std::vector<Attachment>& out) {
      for (const auto& a : doc.at(key)) {
        Attachment att;
        att.name = a.at("name").get<std::string>();
        att.segment = find_named(m.segments_, a.at("segment").get<std::string>());
        if (att.segment < 0) invalid(std::string(key) + " " + att.name + ": unknown segment");
        att.offset = read_vec3(a.at("offset"), att.name);
        out.push_back(std::move(att));
      }
    };
    read_attachments("markers", m.markers_);
    read_attachments("keypoints", m.keypoints_);
    m.lower_mask_ = doc.at("masks").at("lower").get<std::vector<int>>();
    m.upper_mask_ = doc.at("masks").at("upper").get<std::vector<int>>();
    for (const auto& p : doc.value("scaling_pairs", nlohmann::json::array())) {
      ScalingPair pair;
      pair.segment = find_named(m.segments_, p.at("segment").get<std::string>());
      const auto names = p.at("markers").get<std::vector<std::string>>();
      if (names.size() != 2) invalid("scaling pair needs two markers");
      pair.marker_a = find_named(m.markers_, names[0]);
      pair.marker_b = find_named(m.markers_, names[1]);
      if (pair.segment < 0 || pair.marker_a < 0 || pair.marker_b < 0) {
        invalid("scaling pair references unknown segment or marker");
      }
      m.scaling_pairs_.push_back(pair);
    }
    for (const auto& f : doc.value("fallback", nlohmann::json::array())) {
      FallbackEntry entry;
      entry.marker = find_named(m.markers_, f.at("marker").get<std::string>());
      if (entry.marker < 0) invalid("fallback entry for unknown marker");
      for (const auto& [kp, w] : f.at("weights").items()) {
        const int k = find_named(m.keypoints_, kp);
        if (k < 0) invalid("fallback weight for unknown keypoint " + kp);
        entry.weights.emplace_back(k, w.get<double>());
      }
      std::sort(entry.weights.begin(), entry.weights.end());
      entry.max_offset = f.value("max_offset", 0.0);
      m.fallback_.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("model file: ") + e.what());
  }
  m.validate_and_index();
  return m;
}

void BiomechModel::validate_and_index() {
  if (segments_.empty() || segments_[0].parent != -1) invalid("first segment must be the root");
  if (joints_.size() != kNumDofs) {
    invalid("model declares " + std::to_string(joints_.size()) + " DoF, expected 22");
  }
  if (markers_.size() != kNumMarkers) {
    invalid("model declares " + std::to_string(markers_.size()) + " markers, expected 29");
  }
  if (keypoints_.size() != kNumKeypoints) {
    invalid("model declares " + std::to_string(keypoints_.size()) + " keypoints, expected 26");
  }
  for (auto& seg : segments_) seg.dofs.clear();
  for (std::size_t i = 0; i < joints_.size(); ++i) {
    const Joint& j = joints_[i];
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) invalid("joint " + j.name + ": axis is not unit norm");
    if (!(j.lower < j.upper)) invalid("joint " + j.name + ": lower limit must be below upper");
    if (j.segment == 0) invalid("joint " + j.name + ": the root is driven by the floating base");
    segments_[static_cast<std::size_t>(j.segment)].dofs.push_back(static_cast<int>(i));
  }
  for (const auto& seg : segments_) {
    if (!(seg.scale > 0.0)) invalid("segment " + seg.name + ": scale must be positive");
  }
  auto check_mask = [](const std::vector<int>& mask, std::size_t expected, const char* name) {
    if (mask.size() != expected) {
      invalid(std::string(name) + " mask has " + std::to_string(mask.size()) + " entries, expected " +
              std::to_string(expected));
    }
    std::set<int> seen;
    for (int i : mask) {
      if (i < 0 || i >= static_cast<int>(kNumDofs) || !seen.insert(i).second) {
        invalid(std::string(name) + " mask has an invalid or repeated index");
      }
    }
  };
  check_mask(lower_mask_, kLowerMaskSize, "lower");
  check_mask(upper_mask_, kUpperMaskSize, "upper");
  std::set<int> all(lower_mask_.begin(), lower_mask_.end());
  all.insert(upper_mask_.begin(), upper_mask_.end());
  if (all.size() != kNumDofs) invalid("lower and upper masks must together cover all 22 DoF");
  if (!fallback_.empty()) {
    if (fallback_.size() != kNumMarkers) invalid("fallback table must cover all 29 markers");
    std::set<int> covered;
    for (const auto& f : fallback_) {
      double total = 0.0;
      for (const auto& [k, w] : f.weights) total += w;
      if (std::abs(total - 1.0) > 1e-9) {
        invalid("fallback weights for " + markers_[f.marker].name + " do not sum to 1");
      }
      covered.insert(f.marker);
    }
    if (covered.size() != kNumMarkers) invalid("fallback table repeats a marker");
  }

  const std::size_t n = segments_.size();
  subtree_.assign(n, std::vector<bool>(n, false));
  for (std::size_t s = 0; s < n; ++s) {
    for (int a = static_cast<int>(s); a >= 0; a = segments_[static_cast<std::size_t>(a)].parent) {
      subtree_[static_cast<std::size_t>(a)][s] = true;
    }
  }
}

nlohmann::json BiomechModel::to_json() const {
  nlohmann::json doc;
  doc["name"] = name_;
  auto vec = [](const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
  for (const auto& s : segments_) {
    doc["segments"].push_back({{"name", s.name},
                               {"parent", s.parent < 0 ? "" : segments_[s.parent].name},
                               {"offset", vec(s.offset)},
                               {"scale", s.scale}});
  }
  for (const auto& j : joints_) {
    doc["joints"].push_back({{"name", j.name},
                             {"segment", segments_[j.segment].name},
                             {"axis", vec(j.axis)},
                             {"lower", j.lower},
                             {"upper", j.upper},
                             {"side", side_name(j.side)}});
  }
  for (const auto& k : keypoints_) {
    doc["keypoints"].push_back(
        {{"name", k.name}, {"segment", segments_[k.segment].name}, {"offset", vec(k.offset)}});
  }
  for (const auto& m : markers_) {
    doc["markers"].push_back(
        {{"name", m.name}, {"segment", segments_[m.segment].name}, {"offset", vec(m.offset)}});
  }
  doc["masks"] = {{"lower", lower_mask_}, {"upper", upper_mask_}};
  for (const auto& p : scaling_pairs_) {
    doc["scaling_pairs"].push_back(
        {{"segment", segments_[p.segment].name},
         {"markers", {markers_[p.marker_a].name, markers_[p.marker_b].name}}});
  }
  for (const auto& f : fallback_) {
    nlohmann::json w = nlohmann::json::object();
    for (const auto& [k, v] : f.weights) w[keypoints_[k].name] = v;
    doc["fallback"].push_back(
        {{"marker", markers_[f.marker].name}, {"weights", w}, {"max_offset", f.max_offset}});
  }
  return doc;
}

int BiomechModel::segment_index(std::string_view name) const { return find_named(segments_, name); }
int BiomechModel::joint_index(std::string_view name) const { return find_named(joints_, name); }
int BiomechModel::marker_index(std::string_view name) const { return find_named(markers_, name); }
int BiomechModel::keypoint_index(std::string_view name) const { return find_named(keypoints_, name); }

JointVector BiomechModel::lower_limits() const {
  JointVector v;
  for (std::size_t i = 0; i < kNumDofs; ++i) v[i] = joints_[i].lower;
  return v;
}

JointVector BiomechModel::upper_limits() const {
  JointVector v;
  for (std::size_t i = 0; i < kNumDofs; ++i) v[i] = joints_[i].upper;
  return v;
}

bool BiomechModel::within_limits(const JointVector& q, double tol) const {
  for (std::size_t i = 0; i < kNumDofs; ++i) {
    if (!std::isfinite(q[i]) || q[i] < joints_[i].lower - tol || q[i] > joints_[i].upper + tol) {
      return false;
    }
  }
  return true;
}

void BiomechModel::set_scale(int segment, double scale) {
  if (!(scale > 0.0)) invalid("segment scale must be positive");
  segments_.at(static_cast<std::size_t>(segment)).scale = scale;
}

BiomechModel load_model(const std::filesystem::path& path) {
  return BiomechModel::from_json(read_json_file(path));
}

const BiomechModel& default_model() {
  static const BiomechModel model =
      BiomechModel::from_json(nlohmann::json::parse(default_model_json()));
  return model;
}

std::size_t MarkerFrame::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

std::vector<Rigid> segment_poses(const BiomechModel& model, const JointVector& q,
                                 const BasePose& base) {
  const auto& segs = model.segments();
  const auto& joints = model.joints();
  std::vector<Rigid> poses(segs.size());
  poses[0] = base.transform();
  for (std::size_t s = 1; s < segs.size(); ++s) {
    const Segment& seg = segs[s];
    const Rigid& parent = poses[static_cast<std::size_t>(seg.parent)];
    Mat3 local = Mat3::Identity();
    for (int d : seg.dofs) local = local * exp_so3(joints[d].axis * q[d]);
    Rigid pose = Rigid::Identity();
    pose.translation() = parent * (segs[seg.parent].scale * seg.offset);
    pose.linear() = parent.linear() * local;
    poses[s] = pose;
  }
  return poses;
}

MarkerFrame forward_kinematics(const BiomechModel& model, const JointVector& q,
                               const BasePose& base) {
  const auto poses = segment_poses(model, q, base);
  MarkerFrame out;
  const auto& segs = model.segments();
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    const Attachment& a = model.markers()[m];
    out.markers[m] = poses[a.segment] * (segs[a.segment].scale * a.offset);
  }
  return out;
}

std::array<Vec3, kNumKeypoints> keypoint_positions(const BiomechModel& model,
                                                   const JointVector& q, const BasePose& base) {
  const auto poses = segment_poses(model, q, base);
  std::array<Vec3, kNumKeypoints> out{};
  const auto& segs = model.segments();
  for (std::size_t k = 0; k < kNumKeypoints; ++k) {
    const Attachment& a = model.keypoints()[k];
    out[k] = poses[a.segment] * (segs[a.segment].scale * a.offset);
  }
  return out;
}

MarkerJacobian marker_jacobian(const BiomechModel& model, const JointVector& q,
                               const BasePose& base) {
  const auto& segs = model.segments();
  const auto& joints = model.joints();
  const auto poses = segment_poses(model, q, base);

  // World axis and pivot of every joint.
  std::array<Vec3, kNumDofs> axis_world{};
  std::array<Vec3, kNumDofs> pivot{};
  for (std::size_t s = 1; s < segs.size(); ++s) {
    const Segment& seg = segs[s];
    Mat3 r = poses[static_cast<std::size_t>(seg.parent)].linear();
    for (int d : seg.dofs) {
      axis_world[d] = r * joints[d].axis;
      pivot[d] = poses[s].translation();
      r = r * exp_so3(joints[d].axis * q[d]);
    }
  }

  MarkerJacobian jac = MarkerJacobian::Zero();
  const Vec3 root = poses[0].translation();
  const Mat3 root_rot = poses[0].linear();
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    const Attachment& a = model.markers()[m];
    const Vec3 p = poses[a.segment] * (segs[a.segment].scale * a.offset);
    const auto row = static_cast<Eigen::Index>(3 * m);
    jac.block<3, 3>(row, 0).setIdentity();
    for (int k = 0; k < 3; ++k) {
      jac.block<3, 1>(row, 3 + k) = root_rot.col(k).cross(p - root);
    }
    for (std::size_t d = 0; d < kNumDofs; ++d) {
      if (!model.in_subtree(joints[d].segment, a.segment)) continue;
      jac.block<3, 1>(row, static_cast<Eigen::Index>(kNumBaseDofs + d)) =
          axis_world[d].cross(p - pivot[d]);
    }
  }
  return jac;
}

BasePose retract_base(const BasePose& base, const Eigen::Ref<const Eigen::Matrix<double, 6, 1>>& d) {
  BasePose out;
  out.translation = base.translation + d.head<3>();
  const Mat3 r = exp_so3(base.rotation) * exp_so3(d.tail<3>());
  out.rotation = log_so3(r);
  return out;
}

std::vector<double> segment_scale_factors(const BiomechModel& model, const MarkerFrame& standing) {
  const MarkerFrame neutral = forward_kinematics(model, JointVector::Zero(), BasePose{});
  std::vector<double> factors(model.segments().size(), 1.0);
  for (const auto& pair : model.scaling_pairs()) {
    const double model_len = (neutral.markers[pair.marker_a] - neutral.markers[pair.marker_b]).norm();
    const double measured =
        (standing.markers[pair.marker_a] - standing.markers[pair.marker_b]).norm();
    if (model_len <= 0.0) fail(ErrorCode::kModelValidation, "scaling pair with coincident markers");
    factors[static_cast<std::size_t>(pair.segment)] = measured / model_len;
  }
  return factors;
}

BiomechModel scale_model(const BiomechModel& model, const MarkerFrame& standing,
                         const ScaleOptions& options) {
  if (standing.valid_count() != kNumMarkers) {
    fail(ErrorCode::kMissingInput, "scale_model: all 29 markers must be valid");
  }
  for (const auto& m : standing.markers) {
    if (!m.allFinite()) fail(ErrorCode::kNonFinite, "scale_model: non-finite marker");
  }
  const auto factors = segment_scale_factors(model, standing);
  BiomechModel scaled = model;
  for (std::size_t s = 0; s < factors.size(); ++s) {
    const double value = std::clamp(model.segments()[s].scale * factors[s], options.min_scale,
                                    options.max_scale);
    scaled.set_scale(static_cast<int>(s), value);
  }

  const MarkerFrame neutral = forward_kinematics(scaled, JointVector::Zero(), BasePose{});
  const Rigid align = fit_rigid(neutral.markers, standing.markers);
  std::vector<double> sq(scaled.segments().size(), 0.0);
  std::vector<int> count(scaled.segments().size(), 0);
  for (std::size_t m = 0; m < kNumMarkers; ++m) {
    const auto seg = static_cast<std::size_t>(scaled.markers()[m].segment);
    sq[seg] += (align * neutral.markers[m] - standing.markers[m]).squaredNorm();
    ++count[seg];
  }
  for (std::size_t s = 0; s < sq.size(); ++s) {
    if (count[s] == 0) continue;
    const double rms = std::sqrt(sq[s] / count[s]);
    if (rms > options.max_residual) {
      fail(ErrorCode::kNonStandingPose,
           "scale_model: segment " + scaled.segments()[s].name + " residual " +
               std::to_string(rms) + " m exceeds " + std::to_string(options.max_residual) +
               " m; calibration frame is not a standing pose");
    }
  }
  return scaled;
}

nlohmann::json marker_frame_to_json(const MarkerFrame& frame) {
  nlohmann::json m = nlohmann::json::array();
  nlohmann::json valid = nlohmann::json::array();
  for (std::size_t i = 0; i < kNumMarkers; ++i) {
    m.push_back({frame.markers[i].x(), frame.markers[i].y(), frame.markers[i].z()});
    valid.push_back(static_cast<bool>(frame.valid[i]));
  }
  return {{"t", frame.timestamp}, {"m", m}, {"valid", valid}};
}

MarkerFrame marker_frame_from_json(const nlohmann::json& j) {
  MarkerFrame out;
  try {
    out.timestamp = j.at("t").get<double>();
    const auto& m = j.at("m");
    if (!m.is_array() || m.size() != kNumMarkers) fail(ErrorCode::kParse, "marker record needs 29 markers");
    for (std::size_t i = 0; i < kNumMarkers; ++i) {
      out.markers[i] = Vec3(m[i][0].get<double>(), m[i][1].get<double>(), m[i][2].get<double>());
      out.valid[i] = j.contains("valid") ? j["valid"][i].get<bool>() : true;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("marker record: ") + e.what());
  }
  return out;
}

nlohmann::json joint_angle_frame_to_json(const JointAngleFrame& frame, double residual) {
  nlohmann::json q = nlohmann::json::array();
  for (std::size_t i = 0; i < kNumDofs; ++i) q.push_back(frame.q[i]);
  nlohmann::json base = {frame.base.translation.x(), frame.base.translation.y(),
                         frame.base.translation.z(), frame.base.rotation.x(),
                         frame.base.rotation.y(),    frame.base.rotation.z()};
  nlohmann::json out = {{"t", frame.timestamp}, {"q", q}, {"base", base}};
  if (residual >= 0.0) out["res"] = residual;
  return out;
}

JointAngleFrame joint_angle_frame_from_json(const nlohmann::json& j) {
  JointAngleFrame out;
  try {
    out.timestamp = j.at("t").get<double>();
    const auto& q = j.at("q");
    if (!q.is_array() || q.size() != kNumDofs) fail(ErrorCode::kParse, "joint-angle record needs 22 angles");
    for (std::size_t i = 0; i < kNumDofs; ++i) out.q[i] = q[i].get<double>();
    if (j.contains("base")) {
      const auto& b = j["base"];
      if (b.size() != 6) fail(ErrorCode::kParse, "base pose needs 6 numbers");
      out.base.translation = Vec3(b[0].get<double>(), b[1].get<double>(), b[2].get<double>());
      out.base.rotation = Vec3(b[3].get<double>(), b[4].get<double>(), b[5].get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("joint-angle record: ") + e.what());
  }
  return out;
}

}  // namespace kinact::biomech
