// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/synth.hpp"

#include <algorithm>
#include <set>

#include "qilin/errors.hpp"
#include "qilin/random.hpp"
#include "qilin/utf8.hpp"

namespace qilin::synth {

using nlohmann::json;

const char* const kDisclaimer =
    "温馨提示：以上内容仅供健康科普参考，不能代替执业医师的面对面诊断和治疗意见，"
    "如果症状持续或者加重，请尽快前往正规医疗机构就诊，以免延误病情。";

namespace {

const std::vector<std::string> kOrgans = {
    "胃", "肺", "肝", "肾", "胆", "肠", "咽", "鼻", "耳", "皮肤", "关节", "膀胱",
    "甲状腺", "胰腺", "食管", "眼"};
const std::vector<std::string> kSuffixes = {"炎", "结石", "溃疡", "息肉",
                                            "功能紊乱"};
const std::vector<std::string> kCauses = {"细菌感染", "病毒感染", "饮食不当",
                                          "过度劳累", "遗传因素", "长期吸烟",
                                          "过量饮酒", "免疫力下降"};
const std::vector<std::string> kSymptoms = {
    "发热", "咳嗽", "腹痛", "恶心", "呕吐", "乏力", "头晕",
    "胸闷", "腹泻", "食欲不振", "皮疹", "水肿", "尿频", "耳鸣"};
const std::vector<std::string> kChecks = {"血常规", "胸部影像", "胃镜",
                                          "超声检查", "尿常规", "心电图",
                                          "肝功能检查"};
const std::vector<std::string> kDepartments = {"消化内科", "呼吸内科",
                                               "肾内科",   "皮肤科",
                                               "普外科",   "耳鼻喉科"};
const std::vector<std::string> kDrugs = {"阿莫西林", "布洛芬",   "奥美拉唑",
                                         "头孢克肟", "蒙脱石散", "氨溴索",
                                         "多潘立酮", "氯雷他定", "二甲双胍",
                                         "硝苯地平"};
const std::vector<std::string> kDiets = {"清淡饮食", "多饮水", "忌辛辣",
                                         "低盐饮食", "戒烟限酒"};

const std::string& pick(const std::vector<std::string>& pool, Rng& rng) {
  return pool[rng.below(pool.size())];
}

// A value from pool that differs from every entry of avoid.
std::string pick_other(const std::vector<std::string>& pool,
                       const std::vector<std::string>& avoid, Rng& rng) {
  while (true) {
    const std::string& v = pick(pool, rng);
    if (std::find(avoid.begin(), avoid.end(), v) == avoid.end()) return v;
  }
}

std::string symptom_answer(const Disease& d) {
  return d.name + "的常见症状有" + d.symptoms[0] + "、" + d.symptoms[1] + "。";
}
std::string drug_answer(const Disease& d) {
  return d.name + "可以在医生指导下使用" + d.drug + "。";
}
std::string department_answer(const Disease& d) {
  return d.name + "建议到" + d.department + "就诊。";
}
std::string cause_answer(const Disease& d) {
  return d.name + "多由" + d.cause + "引起。";
}

// Options A-D holding correct once and three distractors in random order.
data::ExamRecord make_exam(const std::string& question, const std::string& correct,
                           const std::vector<std::string>& forbidden,
                           const std::vector<std::string>& pool,
                           const std::string& explanation, Rng& rng) {
  std::vector<std::string> opts = {correct};
  std::vector<std::string> avoid = forbidden;
  avoid.push_back(correct);
  while (opts.size() < 4) {
    const std::string v = pick_other(pool, avoid, rng);
    opts.push_back(v);
    avoid.push_back(v);
  }
  rng.shuffle(opts);
  data::ExamRecord r;
  r.question = question;
  for (std::size_t i = 0; i < opts.size(); ++i) {
    const char letter = static_cast<char>('A' + i);
    r.options[letter] = opts[i];
    if (opts[i] == correct) r.answer = std::string(1, letter);
  }
  r.explanation = explanation;
  return r;
}

std::string exam_output(const data::ExamRecord& r) {
  return "答案：" + r.answer + "。" + r.explanation;
}

eval::McqItem to_mcq(const data::ExamRecord& r, std::size_t id) {
  eval::McqItem m;
  m.id = "mcq-" + std::to_string(id);
  m.question = r.question;
  m.options = r.options;
  m.gold = r.answer;
  m.reference = exam_output(r);
  return m;
}

std::string truncate_chars(const std::string& s, std::size_t keep) {
  const std::u32string cps = utf8_decode(s);
  return utf8_encode(std::u32string_view(cps).substr(0, std::min(keep, cps.size())));
}

}  // namespace

RawCorpus generate(const SynthOptions& options) {
  // One disease per organ keeps names apart at the character level.
  const std::size_t capacity = kOrgans.size();
  if (options.diseases == 0 || options.diseases > capacity) {
    throw ConfigError("synthetic corpus supports 1.." + std::to_string(capacity) +
                      " diseases, got " + std::to_string(options.diseases));
  }
  Rng rng(options.seed);
  RawCorpus c;

  std::vector<std::string> organs = kOrgans;
  rng.shuffle(organs);
  for (std::size_t i = 0; i < options.diseases; ++i) {
    Disease d;
    d.name = organs[i] + pick(kSuffixes, rng);
    d.cause = pick(kCauses, rng);
    d.symptoms.push_back(pick(kSymptoms, rng));
    d.symptoms.push_back(pick_other(kSymptoms, d.symptoms, rng));
    d.check = pick(kChecks, rng);
    d.department = pick(kDepartments, rng);
    d.drug = pick(kDrugs, rng);
    d.diet = pick(kDiets, rng);
    c.diseases.push_back(std::move(d));
  }

  for (std::size_t i = 0; i < c.diseases.size(); ++i) {
    const Disease& d = c.diseases[i];

    data::KgEntity e;
    e.name = d.name;
    e.relations = {{data::Relation::kDrug, d.drug},
                   {data::Relation::kSymptom, d.symptoms[1]},
                   {data::Relation::kCause, d.cause},
                   {data::Relation::kDepartment, d.department},
                   {data::Relation::kSymptom, d.symptoms[0]},
                   {data::Relation::kCheck, d.check},
                   {data::Relation::kDiet, d.diet}};
    rng.shuffle(e.relations);
    c.kg.push_back(std::move(e));

    const std::string intro = d.name + "多由" + d.cause + "引起，主要表现为" +
                              d.symptoms[0] + "和" + d.symptoms[1] + "。";
    c.texts.push_back(intro + "患者可以到" + d.department + "就诊，通过" +
                      d.check + "明确诊断，常用药物为" + d.drug +
                      "，日常应注意" + d.diet + "。" + kDisclaimer);

    const std::string q_symptom = d.name + "有哪些症状？";
    const std::string q_drug = d.name + "应该吃什么药？";
    const std::string q_dept = d.name + "挂什么科？";
    const std::string q_cause = d.name + "是什么原因引起的？";
    c.qa.push_back({q_symptom, symptom_answer(d)});
    c.qa.push_back({q_drug, drug_answer(d)});
    c.qa.push_back({q_dept, department_answer(d)});
    c.qa.push_back({q_cause, cause_answer(d)});

    data::DialogueRecord dlg;
    dlg.turns.emplace_back(data::Speaker::kPatient,
                           "医生您好，我最近" + d.symptoms[0] + "，还有点" +
                               d.symptoms[1] + "，这是怎么了？");
    dlg.turns.emplace_back(data::Speaker::kDoctor,
                           "可能是" + d.name + "，建议到" + d.department + "做" +
                               d.check + "。");
    if (i % 2 == 0) {
      dlg.turns.emplace_back(data::Speaker::kPatient, "需要吃药吗？");
      dlg.turns.emplace_back(data::Speaker::kDoctor,
                             "可以在医生指导下使用" + d.drug + "，同时注意" +
                                 d.diet + "。");
    }
    c.dialogues.push_back(std::move(dlg));

    c.exams.push_back(make_exam(d.name + "的典型症状是？", d.symptoms[rng.below(2)],
                                d.symptoms, kSymptoms, symptom_answer(d), rng));
    c.exams.push_back(make_exam("治疗" + d.name + "的常用药物是？", d.drug, {},
                                kDrugs, drug_answer(d), rng));

    c.instructions.push_back({"请简要介绍" + d.name + "。", "", {}, intro});

    c.preferences.push_back(
        {q_symptom, symptom_answer(d),
         d.name + "的常见症状有" + pick_other(kSymptoms, d.symptoms, rng) +
             "、" + pick_other(kSymptoms, d.symptoms, rng) + "。"});
    c.preferences.push_back({q_drug, drug_answer(d), "这个问题不好说，你自己看着办吧。"});
    c.preferences.push_back(
        {q_dept, department_answer(d),
         truncate_chars(department_answer(d), utf8_length(d.name) + 2)});
    c.preferences.push_back(
        {q_cause, cause_answer(d),
         d.name + "多由" + pick_other(kCauses, {d.cause}, rng) + "引起。"});

    // Held-out evaluation: fresh option draws and a department item.
    c.eval_mcq.push_back(to_mcq(
        make_exam(d.name + "的典型症状是？", d.symptoms[rng.below(2)], d.symptoms,
                  kSymptoms, symptom_answer(d), rng),
        c.eval_mcq.size()));
    c.eval_mcq.push_back(to_mcq(make_exam(d.name + "应该去哪个科室就诊？",
                                          d.department, {}, kDepartments,
                                          department_answer(d), rng),
                                c.eval_mcq.size()));
    c.heldout_texts.push_back(d.name + "的患者常出现" + d.symptoms[1] + "和" +
                              d.symptoms[0] + "，应到" + d.department +
                              "就诊，并注意" + d.diet + "，必要时使用" + d.drug + "。");
    c.eval_dialogue.push_back({"医生，我" + d.symptoms[0] + "而且" + d.symptoms[1] +
                                   "，是什么病？",
                               "可能是" + d.name + "，建议到" + d.department +
                                   "做" + d.check + "。",
                               ""});
  }
  return c;
}

std::vector<json> to_raw_records(const RawCorpus& c) {
  std::vector<json> out;
  for (const data::KgEntity& e : c.kg) out.push_back(data::raw_to_json(e));
  for (const std::string& t : c.texts) out.push_back({{"source", "text"}, {"text", t}});
  for (const data::QaRecord& r : c.qa) out.push_back(data::raw_to_json(r));
  for (const data::DialogueRecord& d : c.dialogues) out.push_back(data::raw_to_json(d));
  for (const data::ExamRecord& r : c.exams) out.push_back(data::raw_to_json(r));
  for (const data::SftExample& ex : c.instructions) {
    json j = data::to_json(ex);
    j["source"] = "instruction";
    out.push_back(std::move(j));
  }
  for (const data::PreferencePair& p : c.preferences) {
    json j = data::to_json(p);
    j["source"] = "preference";
    out.push_back(std::move(j));
  }
  for (const std::string& t : c.heldout_texts) {
    out.push_back({{"source", "heldout"}, {"text", t}});
  }
  for (const eval::McqItem& m : c.eval_mcq) {
    json j = eval::to_json(m);
    j["source"] = "eval_mcq";
    out.push_back(std::move(j));
  }
  for (const eval::DialogueItem& d : c.eval_dialogue) {
    json j = eval::to_json(d);
    j["source"] = "eval_dialogue";
    out.push_back(std::move(j));
  }
  return out;
}

RawCorpus from_raw_records(std::span<const json> records) {
  RawCorpus c;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const json& j = records[i];
    try {
      const std::string source = j.at("source").get<std::string>();
      if (source == "kg") {
        c.kg.push_back(data::kg_from_json(j));
      } else if (source == "text") {
        c.texts.push_back(j.at("text").get<std::string>());
      } else if (source == "heldout") {
        c.heldout_texts.push_back(j.at("text").get<std::string>());
      } else if (source == "qa") {
        data::QaRecord r{j.at("question").get<std::string>(),
                         j.at("answer").get<std::string>()};
        data::validate(r);
        c.qa.push_back(std::move(r));
      } else if (source == "dialogue") {
        c.dialogues.push_back(data::dialogue_from_json(j));
      } else if (source == "exam") {
        c.exams.push_back(data::exam_from_json(j));
      } else if (source == "instruction") {
        c.instructions.push_back(data::sft_from_json(j));
      } else if (source == "preference") {
        data::PreferencePair p = data::dpo_from_json(j);
        data::validate(p);
        c.preferences.push_back(std::move(p));
      } else if (source == "eval_mcq") {
        auto items = eval::parse_mcq_jsonl(j.dump());
        c.eval_mcq.insert(c.eval_mcq.end(), items.begin(), items.end());
      } else if (source == "eval_dialogue") {
        auto items = eval::parse_dialogue_jsonl(j.dump());
        c.eval_dialogue.insert(c.eval_dialogue.end(), items.begin(), items.end());
      } else {
        throw InputError("unknown source '" + source + "'");
      }
    } catch (const std::exception& e) {
      throw InputError("raw record " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return c;
}

}  // namespace qilin::synth
