//! Key (2012) 201-point digital linear filter for J0 and J1 Hankel transforms.
//!
//! `integral_0^inf f(k) J_n(k r) dk ~= (1/r) sum_i f(BASE[i] / r) WEIGHTS_Jn[i]`

#![allow(clippy::excessive_precision, clippy::unreadable_literal)]

pub(crate) const BASE: [f64; 201] = [
    4.118588707535708e-06,
    4.662307783048404e-06,
    5.2778064058937756e-06,
    5.97456061553286e-06,
    6.7632974390298035e-06,
    7.656160041269817e-06,
    8.666894677627122e-06,
    9.811062327352187e-06,
    1.1106278265924788e-05,
    1.2572483264760042e-05,
    1.42322505935799e-05,
    1.6111133551969887e-05,
    1.8238058880617237e-05,
    2.0645772109076137e-05,
    2.3371341696506312e-05,
    2.645672972698995e-05,
    2.994943794568826e-05,
    3.390323908202406e-05,
    3.8379004719130766e-05,
    4.3445642455208216e-05,
    4.918115678505129e-05,
    5.567385003477687e-05,
    6.302368183899532e-05,
    7.134380809054521e-05,
    8.076232305601659e-05,
    9.142423147817327e-05,
    0.00010349368102719458,
    0.00011715648947091054,
    0.00013262300547161834,
    0.00015013134705348249,
    0.0001699510675990275,
    0.00019238730581535294,
    0.00021778548356175115,
    0.0002465366238651324,
    0.00027908337099788406,
    0.00031592680530155527,
    0.0003576341576754271,
    0.00040484754250000483,
    0.0004582938434450188,
    0.0005187959043609725,
    0.0005872851975459913,
    0.0006648161644249478,
    0.0007525824494258378,
    0.000851935276985483,
    0.0009644042546116447,
    0.0010917209222795108,
    0.001235845410722264,
    0.0013989966190390965,
    0.0015836863762264436,
    0.001792758112573506,
    0.002029430636295734,
    0.0022973476893787268,
    0.002600634045580001,
    0.0029439590142573526,
    0.0033326083277104117,
    0.0037725655187922052,
    0.004270604041657015,
    0.0048343915539089625,
    0.005472607965649308,
    0.006195079072871529,
    0.007012927832585425,
    0.007938745608658544,
    0.008986786024826483,
    0.010173184409377162,
    0.011516206210016314,
    0.013036528203437736,
    0.014757556829019875,
    0.01670578854762277,
    0.018911217773465227,
    0.021407798659484324,
    0.024233967845691123,
    0.027433236218606032,
    0.03105485879233143,
    0.03515459302455746,
    0.039795557242315927,
    0.0450492023935578,
    0.050996412085361466,
    0.05772874784464333,
    0.06534985877304568,
    0.07397707729864236,
    0.08374322559219596,
    0.09479866045903013,
    0.10731358818908403,
    0.12148068500391276,
    0.13751806344428075,
    0.15567263036799733,
    0.1762238882567611,
    0.19948823835583873,
    0.22582385189647586,
    0.2556361843969779,
    0.28938421793905067,
    0.32758752752368947,
    0.37083428029819565,
    0.41979029080811425,
    0.47520927168614446,
    0.5379444375946745,
    0.6089616410728969,
    0.6893542425242224,
    0.7803599432780343,
    0.8833798408827509,
    1.0,
    1.1320158709991752,
    1.2814599321940212,
    1.4506329812931589,
    1.6421395578187052,
    1.858928041846342,
    2.104336046415478,
    2.382141802457978,
    2.6966223273530128,
    3.0526192726543444,
    3.4556134647626755,
    3.911809286149797,
    4.428230196243525,
    5.012826862585463,
    5.6745995670177445,
    6.423736771429134,
    7.271771976378781,
    8.231761287547819,
    9.318484423780736,
    10.548672261378394,
    11.941264417849103,
    13.517700840802913,
    15.302251891207787,
    17.32239200287436,
    19.609222670922968,
    22.197951281441636,
    25.12843315425841,
    28.445785143962375,
    32.20108024599797,
    36.45213390178773,
    41.26439410861079,
    46.71194903811227,
    52.878667676447755,
    59.85949104702991,
    67.76189389517093,
    76.70753933829559,
    86.83415195624421,
    98.29763815922249,
    111.27448647797397,
    125.96448473034971,
    142.5937958969891,
    161.41844006140866,
    182.72823602144376,
    206.85126325595743,
    234.15891294197226,
    265.0716057862269,
    300.06526470124555,
    339.67864197737873,
    384.5216137578392,
    435.2845695160886,
    492.7490410932563,
    557.7997349371907,
    631.4381527880333,
    714.7980105104556,
    809.1626924564707,
    915.9850100811499,
    1036.9095690092008,
    1173.7980889093292,
    1328.7580659938624,
    1504.175219423221,
    1702.7502211507524,
    1927.5402746900081,
    2182.006182939198,
    2470.0656297055034,
    2796.1534952362003,
    3165.290134357197,
    3583.1586684094545,
    4056.1924809477755,
    4591.674264260404,
    5197.848141601231,
    5884.046591336165,
    6660.8341270911405,
    7540.169945960111,
    8535.592048857829,
    9662.425667681435,
    10938.019208165191,
    12382.011340936813,
    14016.633352832258,
    15867.051413382505,
    17961.754025908867,
    20332.99062831218,
    23017.268096126892,
    26055.912791858576,
    29495.706813754354,
    33389.60823950846,
    37797.56645356835,
    42787.44511058541,
    48436.06694468877,
    54830.396510166145,
    62068.8790626859,
    70262.95619408888,
    79538.78155502846,
    90039.16308022855,
    101925.76161830177,
    115381.57981559623,
    130613.77957221285,
    147856.8714469329,
    167376.3251142129,
    189472.6564588066,
    214486.05423174356,
    242801.6174983236,
];

pub(crate) const WEIGHTS_J0: [f64; 201] = [
    0.001502009920951996,
    -0.010381698214761684,
    0.036840860097595164,
    -0.0899033803922747,
    0.1708228653683386,
    -0.2711574965683628,
    0.37649328091859574,
    -0.47220778569122657,
    0.5477821108964709,
    -0.598235168530351,
    0.6234579161218533,
    -0.6265043664825772,
    0.6119722535117335,
    -0.5847017386614045,
    0.5491105578961686,
    -0.5087886168486084,
    0.466521063454302,
    -0.42426478870289325,
    0.3833953891193336,
    -0.34472344791723936,
    0.3087689146689051,
    -0.2757043936836481,
    0.24562331000974616,
    -0.21839207265400126,
    0.19393194321380827,
    -0.17198162962644575,
    0.15242270280410272,
    -0.13494945901825492,
    0.11946763189654602,
    -0.10565870880444576,
    0.09348235554803391,
    -0.08261252527983624,
    0.07307776352617497,
    -0.06453648128170122,
    0.057096310621587334,
    -0.0503848596052138,
    0.04459955739673305,
    -0.039316995063444334,
    0.03483854475429614,
    -0.030664946477420088,
    0.027221072240291456,
    -0.0239015861084346,
    0.021281566646364738,
    -0.018612484595521447,
    0.0166553863034614,
    -0.014472420076504743,
    0.013057747649606617,
    -0.0112262860010603,
    0.01026681855793083,
    -0.008673802242165359,
    0.008110336867084816,
    -0.006657362814208594,
    0.0064551189810889585,
    -0.005052401511783908,
    0.005198901427050626,
    -0.0037597430078747883,
    0.004264054516529264,
    -0.0026994965688974474,
    0.003592800056058723,
    -0.001806129128998902,
    0.0031436470898586703,
    -0.0010244200001620755,
    0.0028888297674091743,
    -0.00030605070741955765,
    0.0028125907445050334,
    0.00039337862066047565,
    0.0029102041487017727,
    0.0011170884769911178,
    0.003187676341595336,
    0.0019097806429850762,
    0.003662102032146541,
    0.002820378358784995,
    0.004362688559939043,
    0.00390500249156868,
    0.005332492348686608,
    0.005230339939427049,
    0.006630934845839698,
    0.006877554068703745,
    0.008337168998822609,
    0.00894685647454101,
    0.010554326601376745,
    0.011562765604509096,
    0.013414536265660639,
    0.014879837399735491,
    0.01708424133651957,
    0.01908809265444127,
    0.021768513715084332,
    0.024416120601223806,
    0.027711234465350204,
    0.031127164234404547,
    0.03518414022027745,
    0.03949791311363894,
    0.04444976215720499,
    0.04975843326998389,
    0.05566745711499243,
    0.06194979043415182,
    0.06868206490557184,
    0.07561674395011839,
    0.08258498356357226,
    0.08919363526298704,
    0.09487468694200528,
    0.09889168186909404,
    0.1000429465449573,
    0.09701684432980286,
    0.08778959614991438,
    0.07050976759285542,
    0.04277885348484935,
    0.0035584532926218175,
    -0.04721045326487935,
    -0.10489787743225988,
    -0.1602095040734828,
    -0.19459781573132096,
    -0.1849077459954238,
    -0.1075416502002519,
    0.03603772748747661,
    0.19759013047489976,
    0.26132313321851336,
    0.11713996822458939,
    -0.1875877928130144,
    -0.3023811499746215,
    0.04816313568456773,
    0.36399529664885466,
    -0.14910233461562913,
    -0.26373490348543854,
    0.403626618077187,
    -0.3140979465010458,
    0.1817936940513108,
    -0.09073871804263177,
    0.04294648754516024,
    -0.020586135807067835,
    0.010392667161913182,
    -0.005611784806872302,
    0.0032402025511569896,
    -0.0019858724388273777,
    0.0012807317326135252,
    -0.0008625379175606825,
    0.0006029659078214355,
    -0.00043548936996943465,
    0.00032375891570874245,
    -0.0002469821224005998,
    0.00019279062274925971,
    -0.00015357911509105972,
    0.0001245378784936744,
    -0.00010255126402954421,
    8.555848220947627e-05,
    -7.217092847633435e-05,
    6.143686328308002e-05,
    -5.2693349406473615e-05,
    4.547125514262373e-05,
    -3.943328415865359e-05,
    3.433297116479562e-05,
    -2.9987212220165472e-05,
    2.625765743561439e-05,
    -2.3037978256349448e-05,
    2.024507133101665e-05,
    -1.781292564438252e-05,
    1.5688305607849465e-05,
    -1.382767949211047e-05,
    1.2195005442258958e-05,
    -1.0760110818279243e-05,
    9.497485767095914e-06,
    -8.385371134393834e-06,
    7.405061254071319e-06,
    -6.54036828602285e-06,
    5.7772102413267325e-06,
    -5.103293321879673e-06,
    4.5078641320869195e-06,
    -3.981511195181711e-06,
    3.515999321029234e-06,
    -3.1041249680128287e-06,
    2.7395854235553632e-06,
    -2.4168587823583312e-06,
    2.1310948134441218e-06,
    -1.8780185742021288e-06,
    1.6538488252707735e-06,
    -1.4552318768651144e-06,
    1.2791890865306748e-06,
    -1.1230741959148155e-06,
    9.845363053859617e-07,
    -8.61485744931908e-07,
    7.520624269970173e-07,
    -6.546081033468263e-07,
    5.676445159602976e-07,
    -4.8985884555185e-07,
    4.200967410687925e-07,
    -3.5736212641225517e-07,
    3.008221596993967e-07,
    -2.498151048163967e-07,
    2.0385823466866512e-07,
    -1.6265189071584773e-07,
    1.260741670061131e-07,
    -9.415841791345086e-08,
    6.704391121706343e-08,
    -4.4891090827293947e-08,
    2.7761325666544702e-08,
    -1.5480404355710375e-08,
    7.532730014109875e-09,
    -3.0524770418657847e-09,
    9.587785609683078e-10,
    -2.0575286298055636e-10,
    2.2414416956474645e-11,
];

pub(crate) const WEIGHTS_J1: [f64; 201] = [
    4.782787133250618e-10,
    -2.9784175503440788e-09,
    9.772383277089722e-09,
    -2.238234099608581e-08,
    4.044677432947085e-08,
    -6.173481585455392e-08,
    8.329391218560819e-08,
    -1.024945350228408e-07,
    1.1780779749909977e-07,
    -1.287006146083485e-07,
    1.35592434383499e-07,
    -1.3921010821521872e-07,
    1.406574572276967e-07,
    -1.407488190837528e-07,
    1.4051720878600928e-07,
    -1.404074668777783e-07,
    1.4127886061686993e-07,
    -1.4315595655055356e-07,
    1.4689283208027915e-07,
    -1.5210916706348747e-07,
    1.598980155013874e-07,
    -1.694091840791126e-07,
    1.8227089415749844e-07,
    -1.969585687860337e-07,
    2.160395242710676e-07,
    -2.3691320619292838e-07,
    2.6369843208466607e-07,
    -2.9202021404039016e-07,
    3.285244508632466e-07,
    -3.6589094553627693e-07,
    4.148750103686303e-07,
    -4.6327136995173986e-07,
    5.285269736975052e-07,
    -5.903498371995408e-07,
    6.77102116115609e-07,
    -7.551294280790103e-07,
    8.70624734664098e-07,
    -9.678853091813045e-07,
    1.1222658353725904e-06,
    -1.2417228058919743e-06,
    1.449346703689914e-06,
    -1.593245655920808e-06,
    1.8747045814274419e-06,
    -2.0433320340041385e-06,
    2.4285695351967146e-06,
    -2.617992645652053e-06,
    3.151172966139178e-06,
    -3.349241203288127e-06,
    4.096418661354996e-06,
    -4.275827575123915e-06,
    5.33711975522078e-06,
    -5.44354237736265e-06,
    6.97257669216721e-06,
    -6.9045562968161745e-06,
    9.139702543697744e-06,
    -8.714837303363596e-06,
    1.2029590806160379e-05,
    -1.0927976968519436e-05,
    1.59125267194553e-05,
    -1.3582559661331659e-05,
    2.1176226828087565e-05,
    -1.6678205993448338e-05,
    2.8384979250408712e-05,
    -2.0132088397797457e-05,
    3.837204531118811e-05,
    -2.3702184335455945e-05,
    5.238530885000794e-05,
    -2.685437394370126e-05,
    7.231858155790216e-05,
    -2.8535361884516687e-05,
    0.00010108123118106823,
    -2.6788477540644352e-05,
    0.00014319185407094621,
    -1.8108424211338017e-05,
    0.00020573561552327273,
    3.6361648565843316e-06,
    0.0002999126469285961,
    4.8993332079278846e-05,
    0.00044354733854670903,
    0.00013589101811995494,
    0.0006651582352127376,
    0.0002945199160862439,
    0.0010105553806271136,
    0.0005753396479225405,
    0.0015535077418254303,
    0.0010621193133794828,
    0.0024128970258747457,
    0.0018929698186109245,
    0.0037800177772191607,
    0.0032937343278959356,
    0.005961217980039154,
    0.005629593532055224,
    0.009442252680316808,
    0.009481022824713792,
    0.014979159139973408,
    0.015745093424331037,
    0.02370896637000014,
    0.02574059076213687,
    0.0372327828431175,
    0.04122500890061429,
    0.05750710321227736,
    0.06404464284623569,
    0.08609179655185725,
    0.09471713980445745,
    0.12172497389177185,
    0.128535970003989,
    0.15450777327408322,
    0.1475596409096932,
    0.15621399202016978,
    0.11147620703185755,
    0.07748983135608338,
    -0.02762826685014771,
    -0.1019873017831784,
    -0.2203988997111164,
    -0.21185762869925318,
    -0.1605241508315224,
    0.09164902579868109,
    0.23792823877700942,
    0.26075777853738125,
    -0.15662188259001042,
    -0.28932081756330175,
    0.01314851911624769,
    0.42691302759079564,
    -0.4000505000648904,
    0.11513789407450359,
    0.09374824435871762,
    -0.16037231301955096,
    0.15071857939129532,
    -0.12120369075996129,
    0.09411065607998234,
    -0.07374223843458433,
    0.059038567576124905,
    -0.04828811752847585,
    0.04019705429957688,
    -0.03391978772064108,
    0.02891824715676397,
    -0.024845271759013743,
    0.021470449751150148,
    -0.01863582802005709,
    0.01622957936236386,
    -0.014170085406786529,
    0.01239608412101189,
    -0.010860414401084047,
    0.009525944424535663,
    -0.008362857744723338,
    0.0073468029551253195,
    -0.006457604321096636,
    0.005678343995599488,
    -0.004994694916726544,
    0.004394425810860881,
    -0.003867026401966086,
    0.003403418035555667,
    -0.0029957260668529964,
    0.0026370977166248776,
    -0.002321554011737298,
    0.0020438677474690805,
    -0.0017994616759226389,
    0.0015843226896713463,
    -0.0013949288614414647,
    0.001228186970888625,
    -0.0010813786997088304,
    0.0009521140746075729,
    -0.0008382910302044814,
    0.0007380601822098776,
    -0.0006497940667124724,
    0.0005720602290123041,
    -0.0005035976454348357,
    0.000443296041223001,
    -0.00039017773206623073,
    0.0003433816697409889,
    -0.00030214941633163506,
    0.00026581280850704716,
    -0.0002337831047958839,
    0.00020554143583887405,
    -0.00018063040107732216,
    0.00015864667598176302,
    -0.0001392345123516876,
    0.00012208003098625932,
    -0.00010690622166177854,
    9.346858036256814e-05,
    -8.155132858123432e-05,
    7.096417463153107e-05,
    -6.153959246866666e-05,
    5.313060911614544e-05,
    -4.560910598312646e-05,
    3.886464858418121e-05,
    -3.2803856352344075e-05,
    2.735029677587626e-05,
    -2.24448161508053e-05,
    1.804607628158424e-05,
    -1.4130826937491561e-05,
    1.0693106849359383e-05,
    -7.741205331453028e-06,
    5.29105764436983e-06,
    -3.3552268362550323e-06,
    1.928295620636745e-06,
    -9.725371257205876e-07,
    4.110080763295935e-07,
    -1.3553176263207053e-07,
    3.0748587523233524e-08,
    -3.5668195345476294e-09,
];
