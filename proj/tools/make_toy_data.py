#!/usr/bin/env python3
"""Generate the bundled toy dataset under data/toy/.

Outputs:
  pinyin.tsv        char<TAB>toneless reading (ü written as v)
  glyphs.gly1       procedural 32x32 glyphs in GLY1 format
  clean_train.txt   500 template sentences
  clean_test.txt    200 template sentences, disjoint from the training ones

The glyphs are synthetic: every character is drawn as a left and a right
component picked from a small stroke library, so characters sharing a
component are visually similar. Use tools/render_glyphs.py with a real CJK
font to build an atlas for real data.

Requires pypinyin (only needed to regenerate the files).
"""
import argparse
import random
import struct
from pathlib import Path

from pypinyin import Style, lazy_pinyin

SUBJECTS = ["我们", "你们", "他们", "老师", "学生", "妈妈", "爸爸", "朋友",
            "同学", "医生", "孩子", "哥哥", "姐姐", "弟弟", "妹妹", "我", "你", "他"]
TIMES = ["今天", "明天", "昨天", "晚上", "早上", "下午", "周末"]
# Places share their last character so only the first one tells them apart.
PLACES = ["商店", "饭店", "书店", "花店", "学校", "公园", "医院", "市场",
          "教室", "车站", "银行", "家里"]
ACTIVITIES = ["看书", "写字", "买菜", "吃饭", "喝水", "唱歌", "跳舞", "打球",
              "做饭", "上课", "工作", "休息", "画画", "学习", "开会", "买票"]
TEMPLATES = [
    "{s}{t}在{p}{a}",
    "{t}{s}在{p}{a}",
    "{s}{t}去{p}{a}",
]

# Common characters used as homophone confusers.
POOL = (
    "的一是不了人在有中大为上个国以要他时来用们生到作地于出就分对成会可主发年动"
    "同工也能下过子说产种面而方后多定行学法所民得经十三之进着等部度家电力里如水化"
    "高自二理起小物现实加量都两体制机当使点从业本去把性好应开它合还因由其些然前外"
    "天政四日那社义事平形相全表间样与关各重新线内数正心反你明看原又么利比或但质气"
    "第向道命此变条只没结解问意建月公无系军很情者最立代想已通并提直题党程展五果料"
    "象员革位入常文总次品式活设及管特件长求老头基资边流路级少图山统接知较将组见计"
    "别她手角期根论运农指几九区强放决西被干做必战先回则任取据处队南给色光门即保治"
    "北造百规热领七海口东导器压志世金增争济阶油思术极交受联什认六共权收证改清己美"
    "再采转更单风切打白教速花带安场身车例真务具万每目至达走积示议声报斗完类八离华"
    "名确才科张信马节话米整空元况今集温传土许步群广石记需段研界拉林律叫且究观越织"
    "装影算低持音众书布复容儿须际商非验连断深难近矿千周委素技备半办青省列习响约支"
    "般史感劳便团往酸历市克何除消构府称太准精值号率族维划选标写存候毛亲快效斯院查"
    "江型眼王按格养易置派层片始却专状育厂京识适属圆包火住调满县局照参红细引听该铁"
    "价严首底液官德随病苏失尔死讲配女黄推显谈罪神艺呢席含企望密批营项防举球英氧势"
    "告李台落木帮轮破亚师围注远字材排供河态封另施减树溶怎止案言士均武固叶鱼波视仅"
    "费紧爱左章早朝害续轻服试食充兵源判护司足某练差致板田降黑犯负击范继兴似余坚曲"
    "输修故城夫够送笔船占右财吃富春职觉汉画功巴跟虽杂飞检吸助升阳互初创抗考投坏策"
    "古径换未跑留钢曾端责站简述钱副尽帝射草冲承独令限阿宣环双请超微让控州良轴找否"
    "纪益依优顶础载倒房突坐粉敌略客袁冷胜绝析块剂测丝协诉念陈仍罗盐友洋错苦夜刑移"
    "频逐靠混母短皮终聚汽村云哪既距卫停烈央察烧迅境若印洲刻括激孔搞甚室待核校散侵"
    "吧甲游久菜味旧模湖货损预阻毫普稳乙妈植息扩银语挥酒守拿序纸医缺雨吗针刘啊急唱"
    "误训愿审附获茶鲜粮斤孩脱硫肥善龙演父渐血欢械掌歌沙刚攻谓盾讨晚粒乱燃矛乎杀药"
    "宁鲁贵钟煤读班伯香介迫句丰培握兰担弦蛋沉假穿执答乐谁顺烟缩征脸喜松脚困异免背"
    "星福买染井概慢怕磁倍祖皇促静补评翻肉践尼衣宽扬棉希伤操垂秋宜氢套督振架亮末宪"
    "庆编牛触映雷销诗座居抓裂胞呼娘景威绿晶厚盟衡鸡孙延危胶屋乡临陆顾掉呀灯岁措束"
    "耐剧玉赵跳哥季课凯胡额款绍卷齐伟蒸殖永宗苗川炉岩弱零杨奏沿露杆探滑镇饭浓航怀"
    "赶库夺伊灵税途灭赛归召鼓播盘裁险康唯录菌纯借糖盖横符私努堂域枪润幅哈竟熟虫泽"
    "脑壤碳欧遍侧寨敢彻虑斜薄庭纳弹饲伸折麦湿暗荷瓦塞床筑恶户访塔奇透梁刀旋迹卡氯"
    "遇份毒泥退洗摆灰彩卖耗夏择忙铜献硬予繁圈雪函亦抽篇阵阴丁尺追堆雄迎泛爸楼避谋"
    "吨野猪旗累偏典馆索秦脂潮爷豆忽托惊塑遗愈朱替纤粗倾尚痛楚谢奋购磨君池旁碎骨监"
    "捕弟暴割贯殊释词亡壁顿宝午尘闻揭炮残冬桥妇警综招吴付浮遭徐您摇谷赞箱隔订男吹"
    "园纷唐败宋玻巨耕坦荣闭湾键凡驻锅救恩剥凝碱齿截炼麻纺禁废盛版缓净睛昌婚涉筒嘴"
    "插岸朗庄街藏姑贸腐奴啦惯乘伙恢匀纱扎辩耳彪臣亿璃抵脉秀萨俄网舞店喷纵寸汗挂洪"
    "贺闪柬爆烯津稻墙软勇像滚厘蒙芳肯坡柱荡腿仪旅尾轧冰贡登黎削钻勒逃障氨郭峰币港"
    "伏轨亩毕擦莫刺浪秘援株健售股岛甘泡睡童铸汤阀休汇舍牧绕炸哲磷绩朋淡尖启陷柴呈"
    "徒颜泪稍忘泵蓝拖洞授镜辛壮锋贫虚弯摩泰幼廷尊窗纲弄隶疑氏宫姐震瑞怪尤琴循描膜"
    "违夹腰缘珠穷森枝竹沟催绳忆邦剩幸浆栏拥牙贮礼滤钠纹罢拍咱喊袖埃勤罚焦潜伍墨欲"
    "缝姓刊饱仿奖铝鬼丽跨默挖链扫喝袋炭污幕诸弧励梅奶洁灾舟鉴苯讼抱毁懂寒智埔寄届"
    "跃渡挑丹艰贝碰拔爹戴码梦芽熔赤渔哭敬颗奔铅仲虎稀妹乏珍申桌遵允隆螺仓魏锐晓氮"
    "兼隐碍赫拨忠肃缸牵抢博巧壳兄杜讯诚碧祥柯页巡矩悲灌龄伦票寻桂铺圣恐恰郑趣抬荒"
    "腾贴柔滴猛阔辆妻填撤储签闹扰紫砂递戏吊陶伐喂疗瓶婆抚臂摸忍虾蜡邻胸巩挤偶弃槽"
    "劲乳邓吉仁烂砖租乌舰伴瓜浅丙暂燥橡柳迷暖牌秧胆详簧踏瓷谱呆宾糊洛辉愤竞隙怒粘"
)


def toneless(ch):
    return lazy_pinyin(ch, style=Style.NORMAL, v_to_u=False)[0]


def make_sentences(rng, count, exclude):
    out = []
    seen = set(exclude)
    while len(out) < count:
        tpl = rng.choice(TEMPLATES)
        s = tpl.format(s=rng.choice(SUBJECTS), t=rng.choice(TIMES),
                       p=rng.choice(PLACES), a=rng.choice(ACTIVITIES))
        if s in seen:
            continue
        seen.add(s)
        out.append(s)
    return out


def make_component(rng):
    """A 16x32 component made of a few thin axis-aligned strokes."""
    comp = [[0] * 16 for _ in range(32)]
    for _ in range(rng.randint(2, 3)):
        if rng.random() < 0.5:
            row = rng.randrange(1, 31)
            c0 = rng.randrange(1, 8)
            c1 = rng.randrange(c0 + 5, 16)
            for c in range(c0, c1):
                comp[row][c] = 255
        else:
            col = rng.randrange(1, 15)
            r0 = rng.randrange(1, 14)
            r1 = rng.randrange(r0 + 8, 32)
            for r in range(r0, r1):
                comp[r][col] = 255
    # soften stroke ends so the atlas carries intermediate intensities
    for r in range(32):
        for c in range(16):
            if comp[r][c] == 0:
                nb = sum(1 for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0))
                         if 0 <= r + dr < 32 and 0 <= c + dc < 16
                         and comp[r + dr][c + dc] == 255)
                if nb >= 2:
                    comp[r][c] = 64
    return comp


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "toy"))
    ap.add_argument("--seed", type=int, default=20250101)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    train = make_sentences(rng, 500, [])
    test = make_sentences(rng, 200, train)

    corpus_chars = []
    for s in train + test:
        for ch in s:
            if ch not in corpus_chars:
                corpus_chars.append(ch)
    readings = {ch: toneless(ch) for ch in corpus_chars}
    confusers = []
    per_reading = {}
    for ch in POOL:
        if ch in readings or ch in confusers:
            continue
        r = toneless(ch)
        if not r.isalpha() or len(r) > 6:
            continue
        if r in readings.values() and per_reading.get(r, 0) < 4:
            per_reading[r] = per_reading.get(r, 0) + 1
            confusers.append(ch)
            readings[ch] = r
    chars = corpus_chars + confusers

    with open(out / "pinyin.tsv", "w", encoding="utf-8") as f:
        f.write("# toneless pinyin for the toy character set (u-umlaut written as v)\n")
        for ch in chars:
            f.write(f"{ch}\t{readings[ch]}\n")

    comps = [make_component(rng) for _ in range(40)]
    used = set()
    with open(out / "glyphs.gly1", "wb") as f:
        f.write(b"GLY1")
        f.write(struct.pack("<I", len(chars)))
        for ch in chars:
            while True:
                left, right = rng.randrange(len(comps)), rng.randrange(len(comps))
                if (left, right) not in used:
                    used.add((left, right))
                    break
            f.write(struct.pack("<I", ord(ch)))
            pix = bytearray(1024)
            for r in range(32):
                for c in range(16):
                    pix[r * 32 + c] = comps[left][r][c]
                    pix[r * 32 + 16 + c] = comps[right][r][c]
            f.write(bytes(pix))

    (out / "clean_train.txt").write_text("\n".join(train) + "\n", encoding="utf-8")
    (out / "clean_test.txt").write_text("\n".join(test) + "\n", encoding="utf-8")
    print(f"{len(corpus_chars)} corpus chars, {len(confusers)} confusers")


if __name__ == "__main__":
    main()
